//! Walk-forward backtest: each week every agent is refit on all earlier
//! weeks, predicts the current week, and the market trades and settles.
//!
//! Features are LOCF-imputed up front (causal, so no look-ahead). A run can
//! be stopped after any week and resumed from its checkpoint; the resumed
//! outputs are byte-identical to an uninterrupted run.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{TimeSeriesFrame, DATE_FORMAT};
use crate::learners::{self, Fit, LearnerSpec, TrainingSet};
use crate::ledger::{self, LedgerRecord};
use crate::market::{Market, MarketConfig, MarketOutcome};
use crate::seed::{derive_seed, mix64};

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const AGENT_PREDICTIONS_FILE: &str = "agent_predictions.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Coordinate separating learner seeds from market draws.
const LEARNER_DOMAIN: u64 = 0x6c65_6172_6e65_72;

#[derive(Debug, Clone, PartialEq)]
pub struct WeekResult {
    pub week: NaiveDate,
    pub agent_predictions: Vec<Option<f64>>,
    pub outcome: MarketOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Hash of the dataset the run was started on.
    pub fingerprint: String,
    pub next_row: usize,
    pub complete: bool,
    pub market: Market,
}

pub struct Backtest {
    frame: TimeSeriesFrame,
    ids: Vec<String>,
    specs: Vec<LearnerSpec>,
    masks: Vec<Vec<usize>>,
    targets: Vec<f64>,
    master_seed: u64,
    market: Market,
    next_row: usize,
}

impl Backtest {
    pub fn new(
        frame: &TimeSeriesFrame,
        roster: Vec<(String, LearnerSpec)>,
        config: MarketConfig,
        master_seed: u64,
    ) -> Result<Self> {
        let market = Market::new(config, roster, master_seed)?;
        Self::with_market(frame, market, master_seed, 0)
    }

    pub fn resume(frame: &TimeSeriesFrame, checkpoint: Checkpoint, master_seed: u64) -> Result<Self> {
        let expected = fingerprint(frame);
        if checkpoint.fingerprint != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written for dataset {}, current dataset is {expected}",
                checkpoint.fingerprint
            )));
        }
        if checkpoint.next_row > frame.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint is at row {} of a {}-row dataset",
                checkpoint.next_row,
                frame.len()
            )));
        }
        Self::with_market(frame, checkpoint.market, master_seed, checkpoint.next_row)
    }

    fn with_market(frame: &TimeSeriesFrame, market: Market, master_seed: u64, next_row: usize) -> Result<Self> {
        let target = frame
            .target()
            .ok_or_else(|| Error::Frame("backtest dataset has no target column".to_string()))?;
        let targets = target
            .iter()
            .zip(frame.weeks())
            .map(|(t, w)| t.ok_or_else(|| Error::Frame(format!("target missing at week {w}"))))
            .collect::<Result<Vec<f64>>>()?;
        let names = frame.column_names();
        let mut problems = Vec::new();
        let mut masks = Vec::new();
        for a in market.agents() {
            if let Err(p) = a.learner.validate() {
                problems.extend(p.into_iter().map(|m| format!("agent `{}`: {m}", a.id)));
                continue;
            }
            match a.learner.resolve_mask(&names) {
                Ok(m) => masks.push(m),
                Err(e) => problems.push(format!("agent `{}`: {e}", a.id)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Backtest {
            frame: frame.impute_locf(),
            ids: market.agents().iter().map(|a| a.id.clone()).collect(),
            specs: market.agents().iter().map(|a| a.learner.clone()).collect(),
            masks,
            targets,
            master_seed,
            market,
            next_row,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn market(&self) -> &Market {
        &self.market
    }

    pub fn next_row(&self) -> usize {
        self.next_row
    }

    pub fn is_done(&self) -> bool {
        self.next_row >= self.frame.len()
    }

    /// Learner predictions for row `t` from models fit on rows `0..t`.
    /// Fitting runs in parallel; results are collected in agent order.
    pub fn agent_predictions(&self, t: usize) -> Vec<Option<f64>> {
        let cols = self.frame.columns();
        (0..self.specs.len())
            .into_par_iter()
            .map(|i| {
                if !self.market.agents()[i].active {
                    return None;
                }
                let mask = &self.masks[i];
                let row: Option<Vec<f64>> = mask.iter().map(|&j| cols[j].values[t]).collect();
                let row = row?;
                let (x, y) = self.training_rows(mask, t);
                let seed = derive_seed(self.master_seed, &[LEARNER_DOMAIN, i as u64]);
                let fit = match learners::fit_rows(&self.specs[i], TrainingSet { x: &x, y: &y }, seed) {
                    Ok(f) => f,
                    Err(e) => {
                        log::warn!("agent `{}` week {}: {e}; abstaining", self.ids[i], self.frame.weeks()[t]);
                        return None;
                    }
                };
                match fit {
                    Fit::Warm(model) => match model.predict(&row) {
                        Ok(p) => Some(p),
                        Err(e) => {
                            log::warn!("agent `{}` week {}: {e}; abstaining", self.ids[i], self.frame.weeks()[t]);
                            None
                        }
                    },
                    Fit::Cold { .. } => None,
                }
            })
            .collect()
    }

    fn training_rows(&self, mask: &[usize], t: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let cols = self.frame.columns();
        let mut x = Vec::with_capacity(t);
        let mut y = Vec::with_capacity(t);
        for r in 0..t {
            let row: Option<Vec<f64>> = mask.iter().map(|&j| cols[j].values[r]).collect();
            if let Some(row) = row {
                x.push(row);
                y.push(self.targets[r]);
            }
        }
        (x, y)
    }

    /// Trades and settles the next week, or `None` when the data is exhausted.
    pub fn step(&mut self) -> Result<Option<WeekResult>> {
        if self.is_done() {
            return Ok(None);
        }
        let t = self.next_row;
        let week = self.frame.weeks()[t];
        let preds = self.agent_predictions(t);
        let outcome = self.market.step(week, &preds, self.targets[t])?;
        self.next_row += 1;
        Ok(Some(WeekResult {
            week,
            agent_predictions: preds,
            outcome,
        }))
    }

    /// Applies the final Q-learning backups; call once after the last week.
    pub fn finish(&mut self) {
        self.market.flush_pending();
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            fingerprint: fingerprint(&self.frame),
            next_row: self.next_row,
            complete: self.is_done(),
            market: self.market.clone(),
        }
    }
}

/// Hash of weeks, column names and all values (after imputation, which is
/// idempotent, so raw and imputed frames with the same content agree).
pub fn fingerprint(frame: &TimeSeriesFrame) -> String {
    let frame = frame.impute_locf();
    let mut h = mix64(frame.len() as u64);
    let mut feed = |v: u64| h = mix64(h ^ v);
    for w in frame.weeks() {
        for b in w.format(DATE_FORMAT).to_string().bytes() {
            feed(b as u64);
        }
    }
    for c in frame.columns() {
        for b in c.name.bytes() {
            feed(b as u64);
        }
        for v in &c.values {
            feed(v.map_or(u64::MAX, f64::to_bits));
        }
    }
    if let Some(t) = frame.target() {
        for v in t {
            feed(v.map_or(u64::MAX, f64::to_bits));
        }
    }
    format!("{h:016x}")
}

/// In-memory results of a complete run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub ids: Vec<String>,
    pub weeks: Vec<NaiveDate>,
    pub market_predictions: Vec<f64>,
    pub agent_predictions: Vec<Vec<Option<f64>>>,
    pub targets: Vec<f64>,
    pub records: Vec<LedgerRecord>,
    /// `budgets[t][i]`: agent `i`'s budget after week `t`.
    pub budgets: Vec<Vec<f64>>,
    pub market: Market,
}

pub fn run(
    frame: &TimeSeriesFrame,
    roster: Vec<(String, LearnerSpec)>,
    config: MarketConfig,
    master_seed: u64,
) -> Result<RunResult> {
    let mut bt = Backtest::new(frame, roster, config, master_seed)?;
    let mut res = RunResult {
        ids: bt.ids().to_vec(),
        weeks: Vec::new(),
        market_predictions: Vec::new(),
        agent_predictions: Vec::new(),
        targets: Vec::new(),
        records: Vec::new(),
        budgets: Vec::new(),
        market: bt.market().clone(),
    };
    while let Some(w) = bt.step()? {
        res.weeks.push(w.week);
        res.market_predictions.push(w.outcome.market_prediction);
        res.targets.push(w.outcome.target);
        res.records.push(LedgerRecord::from_outcome(&w.outcome, &res.ids));
        res.agent_predictions.push(w.agent_predictions);
        res.budgets.push(bt.market().agents().iter().map(|a| a.budget).collect());
    }
    bt.finish();
    res.market = bt.market().clone();
    Ok(res)
}

/// Output files of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub ledger: PathBuf,
    pub predictions: PathBuf,
    pub agent_predictions: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            ledger: dir.join(LEDGER_FILE),
            predictions: dir.join(PREDICTIONS_FILE),
            agent_predictions: dir.join(AGENT_PREDICTIONS_FILE),
            checkpoint: dir.join(CHECKPOINT_FILE),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Continue from `checkpoint.json` in the output directory if present.
    pub resume: bool,
    /// Stop (with a checkpoint) after this many weeks in total.
    pub stop_after: Option<usize>,
}

/// Runs into `dir`, writing the ledger, market and per-agent prediction
/// streams and a checkpoint. Returns the checkpoint written last.
pub fn run_to_dir(
    frame: &TimeSeriesFrame,
    roster: Vec<(String, LearnerSpec)>,
    config: MarketConfig,
    master_seed: u64,
    dir: &Path,
    opts: RunOptions,
) -> Result<Checkpoint> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = RunPaths::new(dir);
    let resuming = opts.resume && paths.checkpoint.exists();
    if opts.resume && !resuming {
        log::warn!("no checkpoint in {}; starting from the first week", dir.display());
    }
    let mut bt = if resuming {
        let text = std::fs::read_to_string(&paths.checkpoint).map_err(|e| Error::io(&paths.checkpoint, e))?;
        let cp: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", paths.checkpoint.display())))?;
        if cp.complete {
            log::info!("run in {} is already complete", dir.display());
            return Ok(cp);
        }
        let bt = Backtest::resume(frame, cp, master_seed)?;
        if bt.market().agents().iter().map(|a| &a.id).ne(roster.iter().map(|(id, _)| id)) {
            return Err(Error::Checkpoint("checkpoint roster differs from the configured learners".into()));
        }
        bt
    } else {
        Backtest::new(frame, roster, config, master_seed)?
    };
    let done = bt.next_row();
    let ids = bt.ids().to_vec();

    let mut ledger_w = open_output(&paths.ledger, resuming, done, None)?;
    let mut pred_w = open_output(&paths.predictions, resuming, done, Some("week_start,prediction"))?;
    let agent_header = format!("week_start,{}", ids.join(","));
    let mut agent_w = open_output(&paths.agent_predictions, resuming, done, Some(&agent_header))?;

    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| Error::io(&p, e)
    };
    while opts.stop_after.is_none_or(|n| bt.next_row() < n) {
        let Some(w) = bt.step()? else { break };
        let day = w.week.format(DATE_FORMAT);
        ledger::write_record(&mut ledger_w, &LedgerRecord::from_outcome(&w.outcome, &ids))
            .map_err(io(&paths.ledger))?;
        writeln!(pred_w, "{day},{}", w.outcome.market_prediction).map_err(io(&paths.predictions))?;
        let cells: Vec<String> = w
            .agent_predictions
            .iter()
            .map(|p| p.map_or(String::new(), |v| v.to_string()))
            .collect();
        writeln!(agent_w, "{day},{}", cells.join(",")).map_err(io(&paths.agent_predictions))?;
    }
    ledger_w.flush().map_err(io(&paths.ledger))?;
    pred_w.flush().map_err(io(&paths.predictions))?;
    agent_w.flush().map_err(io(&paths.agent_predictions))?;
    if bt.is_done() {
        bt.finish();
    }
    let cp = bt.checkpoint();
    let json = serde_json::to_string_pretty(&cp).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(&paths.checkpoint, json + "\n").map_err(io(&paths.checkpoint))?;
    Ok(cp)
}

/// Opens an output for writing. When resuming, keeps the header (if any)
/// plus the first `rows` data lines and appends after them; this drops any
/// lines written after the checkpoint was taken.
fn open_output(path: &Path, resuming: bool, rows: usize, header: Option<&str>) -> Result<BufWriter<File>> {
    let io = |e| Error::io(path, e);
    if resuming {
        let keep = rows + usize::from(header.is_some());
        let file = File::open(path).map_err(io)?;
        let mut kept = Vec::new();
        for line in BufReader::new(file).lines().take(keep) {
            kept.push(line.map_err(io)?);
        }
        if kept.len() != keep {
            return Err(Error::Checkpoint(format!(
                "{} holds {} lines, checkpoint expects {keep}",
                path.display(),
                kept.len()
            )));
        }
        if let (Some(h), Some(first)) = (header, kept.first()) {
            if first != h {
                return Err(Error::Checkpoint(format!("{}: header changed", path.display())));
            }
        }
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for line in kept {
            writeln!(w, "{line}").map_err(io)?;
        }
        Ok(w)
    } else {
        let file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(io)?;
        let mut w = BufWriter::new(file);
        if let Some(h) = header {
            writeln!(w, "{h}").map_err(io)?;
        }
        Ok(w)
    }
}
