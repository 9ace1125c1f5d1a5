#![allow(dead_code)]

use apm_core::backtest::{self, RunResult};
use apm_core::learners::{LearnerKind, LearnerSpec};
use apm_core::market::MarketConfig;
use apm_core::synth::{generate, SourceSpec, SynthSpec};
use apm_core::TimeSeriesFrame;

pub fn passthrough(id: &str) -> (String, LearnerSpec) {
    (id.to_string(), LearnerSpec::new(LearnerKind::Passthrough).with_features(&[id]))
}

pub fn mae_window(pred: &[f64], truth: &[f64], from: usize, to: usize) -> f64 {
    let n = (to - from) as f64;
    (from..to).map(|t| (pred[t] - truth[t]).abs()).sum::<f64>() / n
}

/// Source `a` is exact for weeks 1-100 and noisy afterwards; `b` is the
/// reverse. `c` and `d` are noisy throughout.
pub fn adaptation_frame(seed: u64) -> TimeSeriesFrame {
    let mut spec = SynthSpec::new(200, seed);
    spec.amplitude = 0.012;
    spec.noise_sd = 0.002;
    spec.sources = vec![
        SourceSpec::new("a", 0.0, 0.0).with_switch(100, 0.02),
        SourceSpec::new("b", 0.0, 0.004).with_switch(100, 0.0),
        SourceSpec::new("c", 0.0, 0.01),
        SourceSpec::new("d", 0.006, 0.005),
    ];
    generate(&spec).expect("valid synth spec")
}

pub fn adaptation_run(seed: u64) -> RunResult {
    let roster = ["a", "b", "c", "d"].iter().map(|s| passthrough(s)).collect();
    backtest::run(&adaptation_frame(seed), roster, MarketConfig::default(), seed).expect("run")
}

/// Streams whose quality drifts: the best source degrades at a
/// seed-dependent week while another improves; one stream is stale (two
/// weeks behind), one is persistently biased, one is noisy.
pub fn drifting_frame(seed: u64) -> TimeSeriesFrame {
    let mut spec = SynthSpec::new(156, seed);
    spec.amplitude = 0.012;
    spec.noise_sd = 0.002;
    let shift = 50 + (seed % 5) as usize * 10;
    let mut stale = SourceSpec::new("s3", 0.0, 0.002);
    stale.lag = 2;
    spec.sources = vec![
        SourceSpec::new("s1", 0.0, 0.002).with_switch(shift, 0.005),
        SourceSpec::new("s2", 0.0, 0.005).with_switch(shift, 0.002),
        stale,
        SourceSpec::new("s4", 0.01, 0.003),
        SourceSpec::new("s5", 0.0, 0.008),
    ];
    generate(&spec).expect("valid synth spec")
}

pub fn drifting_run(seed: u64) -> RunResult {
    let roster = ["s1", "s2", "s3", "s4", "s5"].iter().map(|s| passthrough(s)).collect();
    backtest::run(&drifting_frame(seed), roster, MarketConfig::default(), seed).expect("run")
}

/// MAE of the unweighted mean of every source column, each week.
pub fn uniform_average_mae(frame: &TimeSeriesFrame) -> f64 {
    let target = frame.target().expect("target");
    let mut total = 0.0;
    for (t, y) in target.iter().enumerate() {
        let got: Vec<f64> = frame.columns().iter().filter_map(|c| c.values[t]).collect();
        total += (got.iter().sum::<f64>() / got.len() as f64 - y.expect("target")).abs();
    }
    total / frame.len() as f64
}

/// MAE of one source column over rows `from..to` (rows without a value skipped).
pub fn column_mae(frame: &TimeSeriesFrame, name: &str, from: usize, to: usize) -> f64 {
    let target = frame.target().expect("target");
    let col = &frame.column(name).expect("column").values;
    let errs: Vec<f64> = (from..to)
        .filter_map(|t| Some((col[t]? - target[t]?).abs()))
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}
