//! Acceptance suite: one PASS / FAIL / SKIP line per criterion. Exits
//! non-zero if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use apm_core::backtest::RunOptions;
use apm_core::cli::{self, EvalArgs};
use apm_core::config::{PeriodPreset, RunConfig};
use apm_core::eval::{mae, paired_t_test};
use apm_core::learners::{LearnerKind, LearnerSpec};
use apm_core::market::{self, Market, MarketConfig, RoundBounds, Stake};
use apm_core::stats::student_t_two_sided;
use apm_core::synth::oracle_clear_and_settle;

use common::*;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1e);
    let cases = 2000;
    let mut worst = 0.0f64;
    let mut refunds = 0;
    for case in 0..cases {
        let n = rng.random_range(1..=12);
        let target: f64 = rng.random();
        let bandwidth = 10f64.powf(rng.random_range(-3.0..-0.5));
        let stakes: Vec<Stake> = (0..n)
            .map(|_| Stake {
                agent: rng.random_range(0..5),
                prediction: if rng.random_bool(0.5) {
                    rng.random()
                } else {
                    (target + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
                },
                investment: 10f64.powf(rng.random_range(-4.0..3.0)),
            })
            .collect();
        let p: Vec<f64> = stakes.iter().map(|s| s.prediction).collect();
        let v: Vec<f64> = stakes.iter().map(|s| s.investment).collect();
        let price = market::clear(&p, &v).expect("engine clear");
        let settled = market::settle(&stakes, target, bandwidth).expect("engine settle");
        let raw: Vec<(usize, f64, f64)> = stakes.iter().map(|s| (s.agent, s.prediction, s.investment)).collect();
        let (o_price, o_pay) = oracle_clear_and_settle(&raw, target, bandwidth).expect("oracle");
        refunds += usize::from(settled.refunded);
        let pot: f64 = v.iter().sum();
        let mut err = (price - o_price).abs() / price.abs().max(o_price.abs()).max(f64::MIN_POSITIVE);
        if settled.payoffs.len() != o_pay.len() {
            return Verdict::Fail(format!("case {case}: agent sets differ"));
        }
        for &(agent, _, payoff) in &settled.payoffs {
            // Payoffs are compared relative to the pot they divide.
            err = err.max((payoff - o_pay[&agent]).abs() / pot);
        }
        worst = worst.max(err);
        if err > 1e-12 {
            return Verdict::Fail(format!("case {case}: relative error {err:.3e}"));
        }
    }
    Verdict::Pass(format!("{cases} fuzzed ledgers ({refunds} refunds), max relative error {worst:.2e}"))
}

fn random_config(rng: &mut ChaCha8Rng) -> MarketConfig {
    let mut cfg = MarketConfig::default();
    let rounds = rng.random_range(1..=3);
    cfg.rounds = (0..rounds)
        .map(|_| {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            RoundBounds {
                min_rpt: a.min(b),
                max_rpt: a.max(b),
            }
        })
        .collect();
    cfg.initial_budget = 10f64.powf(rng.random_range(-2.0..4.0));
    cfg.payoff_bandwidth = 10f64.powf(rng.random_range(-4.0..-1.0));
    cfg.strategy.epsilon = rng.random();
    cfg
}

fn conservation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0_5e);
    let markets = 10_000;
    let weeks = 4;
    let mut deactivations = 0;
    let spec = LearnerSpec::new(LearnerKind::Passthrough).with_features(&["external"]);
    let start = NaiveDate::from_ymd_opt(2010, 1, 3).expect("date");
    for m in 0..markets {
        let cfg = random_config(&mut rng);
        let floor = cfg.budget_floor * cfg.initial_budget;
        let n = rng.random_range(1..=6);
        let agents = (0..n).map(|i| (format!("a{i}"), spec.clone())).collect();
        let mut market = Market::new(cfg, agents, m).expect("valid config");
        let mut dead = vec![false; n];
        for w in 0..weeks {
            let target: f64 = rng.random_range(0.0..0.1);
            let preds: Vec<Option<f64>> = (0..n)
                .map(|_| rng.random_bool(0.9).then(|| rng.random_range(0.0..0.1)))
                .collect();
            let before = market.total_budget();
            let trades = market
                .run_week(start + chrono::Duration::weeks(w), &preds)
                .expect("run_week");
            let mut all_p = Vec::new();
            let mut all_v = Vec::new();
            for round in &trades.rounds {
                for s in &round.stakes {
                    if dead[s.agent] {
                        return Verdict::Fail(format!("market {m}: inactive agent {} traded", s.agent));
                    }
                    all_p.push(s.prediction);
                    all_v.push(s.investment);
                }
                let funded = all_p.iter().zip(&all_v).filter(|(_, v)| **v > 0.0);
                let lo = funded.clone().map(|(p, _)| *p).fold(f64::INFINITY, f64::min);
                let hi = funded.map(|(p, _)| *p).fold(f64::NEG_INFINITY, f64::max);
                if !(lo <= round.price && round.price <= hi) {
                    return Verdict::Fail(format!("market {m}: price {} outside [{lo}, {hi}]", round.price));
                }
                let c = 10f64.powf(rng.random_range(-6.0..6.0));
                let scaled: Vec<f64> = all_v.iter().map(|v| v * c).collect();
                let again = market::clear(&all_p, &scaled).expect("clear");
                if !rel_close(again, round.price, 1e-12) {
                    return Verdict::Fail(format!("market {m}: scaling by {c:.3e} moved price"));
                }
            }
            let outcome = market.settle_week(trades, target).expect("settle");
            let after = market.total_budget();
            if !rel_close(before, after, 1e-9) {
                return Verdict::Fail(format!("market {m}: budget {before} -> {after}"));
            }
            for (i, a) in market.agents().iter().enumerate() {
                if a.budget < 0.0 {
                    return Verdict::Fail(format!("market {m}: negative budget"));
                }
                if a.budget < floor && a.active {
                    return Verdict::Fail(format!("market {m}: agent {i} below floor but active"));
                }
                dead[i] = !a.active;
            }
            deactivations += outcome.deactivated.len();
        }
    }
    Verdict::Pass(format!(
        "{markets} random markets x {weeks} weeks: zero-sum, convex, scale-free, floor; {deactivations} deactivations"
    ))
}

fn adaptation() -> Verdict {
    let seed = 1;
    let frame = adaptation_frame(seed);
    let run = adaptation_run(seed);
    let overtake = run.budgets.iter().enumerate().skip(100).find(|(_, b)| b[1] > b[0]).map(|(t, _)| t + 1);
    let market_mae = mae_window(&run.market_predictions, &run.targets, 149, 200);
    let (best_id, best) = ["a", "b", "c", "d"]
        .iter()
        .map(|id| (*id, column_mae(&frame, id, 149, 200)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("agents");
    let detail = format!(
        "B overtakes A in week {}; MAE weeks 150-200: market {:.3e}, best agent `{best_id}` {:.3e}",
        overtake.map_or("never".to_string(), |w| w.to_string()),
        market_mae,
        best
    );
    let still_ahead = run.budgets[159][1] > run.budgets[159][0];
    if overtake.is_some_and(|w| w <= 160) && still_ahead && market_mae <= 1.25 * best {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn ensemble_value() -> Verdict {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=5 {
        let run = drifting_run(seed);
        let capm = mae(&run.market_predictions, &run.targets).expect("mae");
        let uniform = uniform_average_mae(&drifting_frame(seed));
        wins += usize::from(capm <= uniform);
        rows.push(format!("{capm:.5}/{uniform:.5}"));
    }
    let detail = format!("c-APM/uniform MAE per seed {}; wins {wins}/5", rows.join(" "));
    if wins >= 4 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn stats_golden() -> Verdict {
    let same = [0.1, 0.4, 0.2];
    let r = paired_t_test(&same, &same).expect("t-test");
    if (r.t, r.p) != (0.0, 1.0) {
        return Verdict::Fail(format!("identical streams gave t={} p={}", r.t, r.p));
    }
    let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).expect("t-test");
    if (r.t - 4.2426).abs() > 1e-4 || (r.p - 0.0132).abs() > 2e-4 {
        return Verdict::Fail(format!("d=1..5 gave t={} p={}", r.t, r.p));
    }
    let mut worst_p = 0.0f64;
    for df in [1.0, 2.0, 3.0, 4.0, 7.0, 12.0, 30.0, 51.0, 273.0, 624.0] {
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid df");
        for t in [0.0, 0.1, 0.5, 1.0, 1.96, 2.5, 4.2426, 7.0, 12.0] {
            let reference = 2.0 * dist.sf(t);
            let ours = student_t_two_sided(t, df);
            worst_p = worst_p.max((ours - reference).abs());
        }
    }
    if worst_p > 1e-10 {
        return Verdict::Fail(format!("p-value deviates from reference by {worst_p:.2e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_decomp = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..300);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.1)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-0.01..0.01)).collect();
        let cut = rng.random_range(1..n);
        let whole = mae(&pred, &truth).expect("mae");
        let parts = (mae(&pred[..cut], &truth[..cut]).expect("mae") * cut as f64
            + mae(&pred[cut..], &truth[cut..]).expect("mae") * (n - cut) as f64)
            / n as f64;
        worst_decomp = worst_decomp.max((whole - parts).abs());
        let c = rng.random_range(-0.05..0.05);
        let shifted: Vec<f64> = truth.iter().map(|t| t + c).collect();
        worst_decomp = worst_decomp.max((mae(&shifted, &truth).expect("mae") - c.abs()).abs());
        let fwd = paired_t_test(&pred, &truth).expect("t");
        let rev = paired_t_test(&truth, &pred).expect("t");
        if fwd.t != -rev.t || fwd.p != rev.p {
            return Verdict::Fail("t-test is not antisymmetric".to_string());
        }
    }
    if worst_decomp > 1e-12 {
        return Verdict::Fail(format!("MAE identities off by {worst_decomp:.2e}"));
    }
    Verdict::Pass(format!(
        "t=0 -> p=1; (4.2426, 4) -> {:.5}; p vs reference max err {worst_p:.1e}; MAE identities max err {worst_decomp:.1e}",
        r.p
    ))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn replication() -> Verdict {
    let (Ok(gft), Ok(cdc)) = (std::env::var("APM_GFT_CSV"), std::env::var("APM_CDC_CSV")) else {
        return Verdict::Skip(
            "historical GFT/CDC files not supplied (set APM_GFT_CSV and APM_CDC_CSV); not evaluated".to_string(),
        );
    };
    let out = tempfile::tempdir().expect("tempdir");
    let mut cfg = match RunConfig::load(&configs_dir().join("replication.toml")) {
        Ok(c) => c,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    cfg.data.gft_csv = Some(gft.into());
    cfg.data.cdc_csv = Some(cdc.into());
    cfg.output_dir = out.path().to_path_buf();
    if let Err(e) = cli::cmd_run(&cfg, RunOptions::default()) {
        return Verdict::Fail(format!("run failed: {e}"));
    }
    let args = EvalArgs {
        preset: Some(PeriodPreset::Calendar),
        ..EvalArgs::default()
    };
    let report = match cli::cmd_eval(&cfg, &args) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("eval failed: {e}")),
    };
    let total = report.rows.last().expect("total row");
    let ratio = total.mae_a / total.mae_b;
    let detail = format!(
        "{}: c-APM {:.3} vs GFT {:.3} (x100), ratio {ratio:.3}, p = {:.2e}, {} rows",
        total.label,
        total.mae_a_x100(),
        total.mae_b_x100(),
        total.p_value,
        report.rows.len()
    );
    if ratio <= 0.75 && total.p_value < 0.05 && total.t_stat < 0.0 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

const DETERMINISM_CONFIG: &str = r#"
master_seed = 99

[synth]
weeks = 60
seed = 99
amplitude = 0.01
noise_sd = 0.002

[[synth.sources]]
name = "x1"
noise_sd = 0.002

[[synth.sources]]
name = "x2"
bias = 0.003
noise_sd = 0.004

[[learners]]
id = "x1"
kind = "passthrough"
features = ["x1"]

[[learners]]
id = "bagged"
kind = "bagged_tree"
params = { n_trees = 8 }

[[learners]]
id = "knn"
kind = "knn"

[[learners]]
id = "ols"
kind = "ols"

[strategy]
epsilon = 0.5

[eval]
baseline_agent = "x1"
"#;

fn determinism() -> Verdict {
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    for d in &dirs {
        let mut cfg = RunConfig::from_toml(DETERMINISM_CONFIG).expect("config");
        cfg.output_dir = d.path().to_path_buf();
        if let Err(e) = cli::cmd_run(&cfg, RunOptions::default()).and_then(|_| cli::cmd_eval(&cfg, &EvalArgs::default()).map(|_| String::new())) {
            return Verdict::Fail(e.to_string());
        }
    }
    let mut names: Vec<String> = std::fs::read_dir(dirs[0].path())
        .expect("read dir")
        .map(|e| e.expect("entry").file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in &names {
        let a = std::fs::read(dirs[0].path().join(name)).expect("read");
        let b = std::fs::read(dirs[1].path().join(name)).unwrap_or_default();
        if a != b {
            return Verdict::Fail(format!("{name} differs between runs"));
        }
    }
    Verdict::Pass(format!("two runs, byte-identical: {}", names.join(", ")))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Verdict); 7] = [
        ("oracle-equivalence", Duration::from_secs(10), oracle_equivalence),
        ("conservation", Duration::from_secs(30), conservation),
        ("adaptation", Duration::from_secs(20), adaptation),
        ("ensemble-value", Duration::from_secs(60), ensemble_value),
        ("statistics", Duration::from_secs(10), stats_golden),
        ("replication", Duration::from_secs(300), replication),
        ("determinism", Duration::from_secs(60), determinism),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let verdict = check();
        let took = start.elapsed();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) if took <= limit => ("PASS", d),
            Verdict::Pass(d) => ("FAIL", format!("{d}; took {took:.1?}, limit {limit:?}")),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        failed += usize::from(tag == "FAIL");
        println!("{tag} {name:<20} {detail} [{:.2}s]", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
