//! Synthetic weekly streams with controllable source quality, and an
//! independent brute-force clearing/settlement oracle for cross-checking the
//! market engine.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Column, TimeSeriesFrame};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSwitch {
    /// Zero-based week index from which `noise_sd` applies.
    pub week: usize,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub lag: usize,
    #[serde(default)]
    pub regime_switches: Vec<RegimeSwitch>,
}

impl SourceSpec {
    pub fn new(name: &str, bias: f64, noise_sd: f64) -> Self {
        SourceSpec {
            name: name.to_string(),
            bias,
            noise_sd,
            lag: 0,
            regime_switches: Vec::new(),
        }
    }

    pub fn with_switch(mut self, week: usize, noise_sd: f64) -> Self {
        self.regime_switches.push(RegimeSwitch { week, noise_sd });
        self
    }

    fn noise_at(&self, week: usize) -> f64 {
        self.regime_switches
            .iter()
            .filter(|s| s.week <= week)
            .max_by_key(|s| s.week)
            .map_or(self.noise_sd, |s| s.noise_sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub weeks: usize,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(default = "default_baseline")]
    pub baseline: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub seed: u64,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2004, 1, 4).expect("valid date")
}

fn default_baseline() -> f64 {
    0.02
}

fn default_period() -> f64 {
    52.0
}

impl SynthSpec {
    pub fn new(weeks: usize, seed: u64) -> Self {
        SynthSpec {
            weeks,
            start: default_start(),
            baseline: default_baseline(),
            amplitude: 0.0,
            period: default_period(),
            phase: 0.0,
            noise_sd: 0.0,
            sources: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.weeks == 0 {
            problems.push("synth.weeks must be >= 1".to_string());
        }
        if !(self.period > 0.0) {
            problems.push("synth.period must be > 0".to_string());
        }
        if !(self.noise_sd >= 0.0) {
            problems.push("synth.noise_sd must be >= 0".to_string());
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.sources {
            if !names.insert(s.name.as_str()) {
                problems.push(format!("synth source `{}` defined twice", s.name));
            }
            if s.name.is_empty() || s.name.contains(',') {
                problems.push(format!("synth source name `{}` is not a valid column name", s.name));
            }
            let sds = std::iter::once(s.noise_sd).chain(s.regime_switches.iter().map(|r| r.noise_sd));
            if sds.into_iter().any(|sd| !(sd >= 0.0)) {
                problems.push(format!("synth source `{}`: noise_sd must be >= 0", s.name));
            }
        }
        problems
    }
}

/// Generates the target series and one column per source. Each series draws
/// from its own seeded stream, so adding a source leaves the others intact.
/// Sources lagging behind the start are missing for their first `lag` weeks.
pub fn generate(spec: &SynthSpec) -> Result<TimeSeriesFrame> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let n = spec.weeks;
    let weeks: Vec<NaiveDate> = (0..n).map(|t| spec.start + Duration::weeks(t as i64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));
    let target: Vec<f64> = (0..n)
        .map(|t| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let angle = 2.0 * std::f64::consts::PI * t as f64 / spec.period + spec.phase;
            (spec.baseline + spec.amplitude * angle.sin() + spec.noise_sd * z).clamp(0.0, 1.0)
        })
        .collect();
    let columns = spec
        .sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1 + i as u64]));
            let values = (0..n)
                .map(|t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let base = t.checked_sub(src.lag)?;
                    Some((target[base] + src.bias + src.noise_at(t) * z).clamp(0.0, 1.0))
                })
                .collect();
            Column::new(src.name.clone(), values)
        })
        .collect();
    TimeSeriesFrame::new(weeks, columns, Some(target.into_iter().map(Some).collect()))
}

/// Brute-force restatement of the clearing and settlement rules, written
/// without any engine helper. `stakes` are `(agent, prediction, investment)`.
/// Returns the cleared price and each agent's payoff.
pub fn oracle_clear_and_settle(
    stakes: &[(usize, f64, f64)],
    target: f64,
    bandwidth: f64,
) -> Result<(f64, BTreeMap<usize, f64>)> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(_, p, v) in stakes {
        num += p * v;
        den += v;
    }
    if den <= 0.0 {
        return Err(Error::Clearing("oracle: nothing invested".to_string()));
    }
    let price = num / den;

    let mut weighted: BTreeMap<usize, f64> = BTreeMap::new();
    let mut invested: BTreeMap<usize, f64> = BTreeMap::new();
    let mut total_weight = 0.0;
    for &(a, p, v) in stakes {
        let z = (p - target) / bandwidth;
        let w = v * (-0.5 * z * z).exp();
        *weighted.entry(a).or_default() += w;
        *invested.entry(a).or_default() += v;
        total_weight += w;
    }
    let payoffs = if total_weight.is_normal() {
        weighted.into_iter().map(|(a, w)| (a, den * w / total_weight)).collect()
    } else {
        invested
    };
    Ok((price, payoffs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_noiseless_target() {
        let f = generate(&SynthSpec::new(12, 1)).unwrap();
        assert!(f.target().unwrap().iter().all(|v| *v == Some(0.02)));
    }

    #[test]
    fn perfect_source_copies_target() {
        let mut spec = SynthSpec::new(30, 5);
        spec.amplitude = 0.01;
        spec.noise_sd = 0.002;
        spec.sources.push(SourceSpec::new("exact", 0.0, 0.0));
        let f = generate(&spec).unwrap();
        assert_eq!(f.columns()[0].values, f.target().unwrap());
    }

    #[test]
    fn lag_shifts_and_switch_changes_noise() {
        let mut spec = SynthSpec::new(20, 2);
        spec.amplitude = 0.01;
        let mut lagged = SourceSpec::new("lagged", 0.0, 0.0);
        lagged.lag = 3;
        spec.sources.push(lagged);
        spec.sources.push(SourceSpec::new("switch", 0.0, 0.0).with_switch(10, 0.01));
        let f = generate(&spec).unwrap();
        let t = f.target().unwrap();
        let lag = &f.columns()[0].values;
        assert!(lag[..3].iter().all(Option::is_none));
        assert_eq!(lag[3..], t[..17]);
        let sw = &f.columns()[1].values;
        assert_eq!(sw[..10], t[..10]);
        assert!((10..20).any(|i| sw[i] != t[i]));
    }

    #[test]
    fn sources_are_independent_streams() {
        let mut spec = SynthSpec::new(15, 9);
        spec.noise_sd = 0.001;
        spec.sources.push(SourceSpec::new("a", 0.0, 0.003));
        let one = generate(&spec).unwrap();
        spec.sources.push(SourceSpec::new("b", 0.01, 0.003));
        let two = generate(&spec).unwrap();
        assert_eq!(one.columns()[0], two.columns()[0]);
        assert_eq!(one.target(), two.target());
    }

    #[test]
    fn oracle_hand_values() {
        let (price, pay) = oracle_clear_and_settle(&[(0, 0.03, 10.0), (1, 0.05, 10.0)], 0.03, 0.01).unwrap();
        assert!((price - 0.04).abs() < 1e-15);
        assert!((pay[&0] - 17.616).abs() < 1e-3);
        assert!((pay[&1] - 2.384).abs() < 1e-3);
        let (_, single) = oracle_clear_and_settle(&[(4, 0.5, 3.0), (4, 0.1, 1.0)], 0.9, 0.01).unwrap();
        assert_eq!(single[&4], 4.0);
        assert!(oracle_clear_and_settle(&[(0, 0.1, 0.0)], 0.1, 0.01).is_err());
    }
}
