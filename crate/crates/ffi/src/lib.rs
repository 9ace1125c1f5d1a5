//! C ABI over the prediction market, the clearing rule and the evaluation
//! statistics.
//!
//! Every function returns an [`ApmStatus`]; on failure a message is kept per
//! thread and can be read with [`apm_last_error`]. Panics never cross the
//! boundary. Market handles are opaque and must be released with
//! [`apm_market_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use apm_core::eval;
use apm_core::learners::{LearnerKind, LearnerSpec};
use apm_core::market::{self, Market, MarketConfig, WeekTrades};
use apm_core::Error;
use chrono::{Duration, NaiveDate};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numerical = 5,
    /// A week is already open, or none is open when settling.
    State = 6,
    Panic = 7,
}

/// Opaque market handle. Agents are external predictors identified by index.
pub struct ApmMarket {
    market: Market,
    open: Option<WeekTrades>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ApmTTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
    /// Non-zero when all differences are equal and non-zero.
    pub degenerate: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: ApmStatus, msg: impl Into<String>) -> ApmStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> ApmStatus {
    let status = match e.exit_code() {
        2 => ApmStatus::Config,
        3 => ApmStatus::Data,
        _ => ApmStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> ApmStatus) -> ApmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == ApmStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(ApmStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or point to `n` readable doubles.
unsafe fn doubles<'a>(ptr: *const f64, n: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(ptr, n))
    }
}

/// Message describing the last failure on this thread (empty after a
/// success). Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn apm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn apm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a market with `n_agents` external agents.
///
/// `config_toml` may be null for the default configuration, or a TOML
/// document with the market keys (`rounds`, `initial_budget`,
/// `payoff_bandwidth`, `budget_floor`, `[strategy]`).
///
/// # Safety
/// `config_toml` must be null or a valid NUL-terminated string; `out` must
/// be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn apm_market_new(
    config_toml: *const c_char,
    n_agents: usize,
    seed: u64,
    out: *mut *mut ApmMarket,
) -> ApmStatus {
    guard(|| {
        if out.is_null() {
            return fail(ApmStatus::NullPointer, "out is null");
        }
        if n_agents == 0 {
            return fail(ApmStatus::InvalidArgument, "n_agents must be positive");
        }
        let config = if config_toml.is_null() {
            MarketConfig::default()
        } else {
            let Ok(text) = CStr::from_ptr(config_toml).to_str() else {
                return fail(ApmStatus::InvalidArgument, "config is not UTF-8");
            };
            match toml::from_str::<MarketConfig>(text) {
                Ok(c) => c,
                Err(e) => return fail(ApmStatus::Config, e.to_string()),
            }
        };
        let spec = LearnerSpec::new(LearnerKind::Passthrough).with_features(&["external"]);
        let agents = (0..n_agents).map(|i| (format!("agent{i}"), spec.clone())).collect();
        match Market::new(config, agents, seed) {
            Ok(market) => {
                *out = Box::into_raw(Box::new(ApmMarket { market, open: None }));
                ApmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `market` must be null or a handle from [`apm_market_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn apm_market_free(market: *mut ApmMarket) {
    if !market.is_null() {
        drop(Box::from_raw(market));
    }
}

/// Opens the next week and trades all rounds. `predictions[i]` is agent
/// `i`'s prediction; NaN means the agent abstains. Writes the market
/// prediction and whether it is the fallback (no stakes this week).
///
/// # Safety
/// `market` must be a live handle, `predictions` must point to `n` doubles
/// and the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn apm_market_run_week(
    market: *mut ApmMarket,
    predictions: *const f64,
    n: usize,
    out_prediction: *mut f64,
    out_fallback: *mut i32,
) -> ApmStatus {
    guard(|| {
        let (Some(m), Some(preds)) = (market.as_mut(), doubles(predictions, n)) else {
            return fail(ApmStatus::NullPointer, "market or predictions is null");
        };
        if out_prediction.is_null() || out_fallback.is_null() {
            return fail(ApmStatus::NullPointer, "output pointer is null");
        }
        if m.open.is_some() {
            return fail(ApmStatus::State, "previous week not settled");
        }
        if n != m.market.agents().len() {
            return fail(
                ApmStatus::InvalidArgument,
                format!("{n} predictions for {} agents", m.market.agents().len()),
            );
        }
        let preds: Vec<Option<f64>> = preds.iter().map(|p| (!p.is_nan()).then_some(*p)).collect();
        let week = NaiveDate::from_ymd_opt(1970, 1, 4).expect("valid date")
            + Duration::weeks(m.market.week_index() as i64);
        match m.market.run_week(week, &preds) {
            Ok(trades) => {
                *out_prediction = trades.market_prediction;
                *out_fallback = i32::from(trades.fallback);
                m.open = Some(trades);
                ApmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Settles the open week against `target` in `[0, 1]`.
///
/// # Safety
/// `market` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn apm_market_settle(market: *mut ApmMarket, target: f64) -> ApmStatus {
    guard(|| {
        let Some(m) = market.as_mut() else {
            return fail(ApmStatus::NullPointer, "market is null");
        };
        let Some(trades) = m.open.take() else {
            return fail(ApmStatus::State, "no open week to settle");
        };
        match m.market.settle_week(trades.clone(), target) {
            Ok(_) => ApmStatus::Ok,
            Err(e) => {
                m.open = Some(trades);
                from_error(e)
            }
        }
    })
}

/// Current budget of agent `agent`.
///
/// # Safety
/// `market` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apm_market_budget(market: *const ApmMarket, agent: usize, out: *mut f64) -> ApmStatus {
    guard(|| {
        let Some(m) = market.as_ref() else {
            return fail(ApmStatus::NullPointer, "market is null");
        };
        if out.is_null() {
            return fail(ApmStatus::NullPointer, "out is null");
        }
        match m.market.agents().get(agent) {
            Some(a) => {
                *out = a.budget;
                ApmStatus::Ok
            }
            None => fail(ApmStatus::InvalidArgument, format!("no agent {agent}")),
        }
    })
}

/// Investment-weighted mean of `n` predictions.
///
/// # Safety
/// `predictions` and `investments` must point to `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apm_clear(
    predictions: *const f64,
    investments: *const f64,
    n: usize,
    out: *mut f64,
) -> ApmStatus {
    guard(|| {
        let (Some(p), Some(v)) = (doubles(predictions, n), doubles(investments, n)) else {
            return fail(ApmStatus::NullPointer, "input is null");
        };
        if out.is_null() {
            return fail(ApmStatus::NullPointer, "out is null");
        }
        match market::clear(p, v) {
            Ok(price) => {
                *out = price;
                ApmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Mean absolute error of `n` predictions against `n` truths.
///
/// # Safety
/// `pred` and `truth` must point to `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apm_mae(pred: *const f64, truth: *const f64, n: usize, out: *mut f64) -> ApmStatus {
    guard(|| {
        let (Some(p), Some(t)) = (doubles(pred, n), doubles(truth, n)) else {
            return fail(ApmStatus::NullPointer, "input is null");
        };
        if out.is_null() {
            return fail(ApmStatus::NullPointer, "out is null");
        }
        match eval::mae(p, t) {
            Ok(v) => {
                *out = v;
                ApmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Two-sided paired t-test on `a - b`.
///
/// # Safety
/// `a` and `b` must point to `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apm_paired_t_test(a: *const f64, b: *const f64, n: usize, out: *mut ApmTTest) -> ApmStatus {
    guard(|| {
        let (Some(a), Some(b)) = (doubles(a, n), doubles(b, n)) else {
            return fail(ApmStatus::NullPointer, "input is null");
        };
        if out.is_null() {
            return fail(ApmStatus::NullPointer, "out is null");
        }
        match eval::paired_t_test(a, b) {
            Ok(r) => {
                *out = ApmTTest {
                    t: r.t,
                    p: r.p,
                    n: r.n,
                    degenerate: i32::from(r.degenerate),
                };
                ApmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
