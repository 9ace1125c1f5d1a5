//! Run configuration (TOML). Every problem is collected before failing so a
//! single invocation reports all of them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{calendar_years, flu_seasons_2008_2013, PeriodSpec};
use crate::ingest::AlignmentSpec;
use crate::learners::{LearnerKind, LearnerSpec};
use crate::market::MarketConfig;
use crate::strategy::StrategyConfig;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub gft_csv: Option<PathBuf>,
    pub cdc_csv: Option<PathBuf>,
    /// Optional `week_start,<value>` series merged in as column `gp`.
    pub gp_csv: Option<PathBuf>,
    /// A canonical dataset; when set, `run` uses it instead of the raw files.
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: String,
    pub kind: LearnerKind,
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub params: std::collections::BTreeMap<String, f64>,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl AgentConfig {
    pub fn spec(&self) -> LearnerSpec {
        let mut spec = LearnerSpec::new(self.kind);
        if let Some(f) = &self.features {
            spec.feature_mask = f.clone();
        }
        spec.hyperparameters = self.params.clone();
        spec.standardize = self.standardize;
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodPreset {
    /// Calendar years 2004 through 2015 plus a `2004-2015` total.
    Calendar,
    /// Flu seasons 2008-09 through 2012-13 plus a `2008-2013` total.
    FluSeasons,
}

impl PeriodPreset {
    pub fn periods(self) -> (Vec<PeriodSpec>, String) {
        match self {
            PeriodPreset::Calendar => (calendar_years(2004, 2015), "2004-2015".to_string()),
            PeriodPreset::FluSeasons => (flu_seasons_2008_2013(), "2008-2013".to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub preset: Option<PeriodPreset>,
    #[serde(default)]
    pub periods: Vec<PeriodSpec>,
    pub total_label: Option<String>,
    /// Agent whose stream is compared against the market (stream b).
    pub baseline_agent: Option<String>,
}

impl EvalConfig {
    /// Periods to report plus the label of the all-period row. Without a
    /// preset or periods, a single `total` row covers every week.
    pub fn resolve(&self) -> (Vec<PeriodSpec>, String) {
        let (mut periods, mut label) = match self.preset {
            Some(p) => p.periods(),
            None => (Vec::new(), "total".to_string()),
        };
        periods.extend(self.periods.iter().cloned());
        if let Some(l) = &self.total_label {
            label = l.clone();
        }
        (periods, label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub alignment: AlignmentSpec,
    #[serde(default)]
    pub market: MarketConfig,
    /// Shorthand for `market.strategy`.
    #[serde(default)]
    pub strategy: Option<StrategyConfig>,
    #[serde(default)]
    pub learners: Vec<AgentConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Generate the dataset instead of reading data files.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if let Some(s) = cfg.strategy.take() {
            if cfg.market.strategy != StrategyConfig::default() {
                return Err(Error::config("set strategy under [strategy] or [market.strategy], not both"));
            }
            cfg.market.strategy = s;
        }
        Ok(cfg)
    }

    /// Loads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut cfg.data.gft_csv);
        rebase(&mut cfg.data.cdc_csv);
        rebase(&mut cfg.data.gp_csv);
        rebase(&mut cfg.data.dataset);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn roster(&self) -> Vec<(String, LearnerSpec)> {
        self.learners.iter().map(|a| (a.id.clone(), a.spec())).collect()
    }

    /// Problems that stop ingestion. Unreadable input files surface later as
    /// data errors.
    pub fn ingest_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match (&self.data.gft_csv, &self.data.cdc_csv) {
            (Some(_), Some(_)) => {}
            _ => problems.push("ingest needs both data.gft_csv and data.cdc_csv".to_string()),
        }
        if self.alignment.feature_sources.is_empty() {
            problems.push("alignment.feature_sources is empty".to_string());
        }
        problems
    }

    /// Problems that stop a run. Lists everything, not just the first.
    pub fn run_problems(&self) -> Vec<String> {
        let mut problems = self.market.validate();
        match (&self.synth, &self.data.dataset) {
            (Some(s), None) => problems.extend(s.validate()),
            (Some(_), Some(_)) => problems.push("set either [synth] or data.dataset, not both".to_string()),
            (None, Some(_)) => {}
            (None, None) => problems.extend(self.ingest_problems()),
        }
        if self.learners.is_empty() {
            problems.push("no [[learners]] configured".to_string());
        }
        let mut seen = BTreeSet::new();
        for a in &self.learners {
            if a.id.is_empty() || a.id.contains(',') || a.id.contains('"') {
                problems.push(format!("learner id `{}` must be non-empty without commas or quotes", a.id));
            }
            if !seen.insert(a.id.as_str()) {
                problems.push(format!("learner id `{}` is used twice", a.id));
            }
            if let Err(p) = a.spec().validate() {
                problems.extend(p.into_iter().map(|m| format!("learner `{}`: {m}", a.id)));
            }
        }
        problems.extend(self.eval_problems());
        problems
    }

    pub fn eval_problems(&self) -> Vec<String> {
        let mut problems: Vec<String> = self.eval.periods.iter().filter_map(PeriodSpec::validate).collect();
        if let Some(b) = &self.eval.baseline_agent {
            if !self.learners.iter().any(|a| &a.id == b) {
                problems.push(format!("eval.baseline_agent `{b}` is not a configured learner"));
            }
        }
        problems
    }
}

pub fn check(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
master_seed = 7
output_dir = "runs/a"

[alignment]
lag_weeks = 2

[strategy]
epsilon = 0.1

[[learners]]
id = "gft"
kind = "passthrough"
features = ["gft_us"]
params = { scale = 1e-5 }

[[learners]]
id = "trees"
kind = "bagged_tree"
params = { n_trees = 10 }

[eval]
preset = "calendar"
baseline_agent = "gft"

[synth]
weeks = 10
seed = 7
"#;

    #[test]
    fn parses_example() {
        let cfg = RunConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.market.strategy.epsilon, 0.1);
        assert_eq!(cfg.market.rounds.len(), 2);
        let roster = cfg.roster();
        assert_eq!(roster[0].1.param("scale"), 1e-5);
        assert_eq!(roster[1].1.feature_mask, vec!["*"]);
        let (periods, label) = cfg.eval.resolve();
        assert_eq!((periods.len(), label.as_str()), (12, "2004-2015"));
        assert!(cfg.run_problems().is_empty(), "{:?}", cfg.run_problems());
    }

    #[test]
    fn lists_every_problem() {
        let text = r#"
[market]
initial_budget = -1

[[learners]]
id = "x"
kind = "knn"
params = { k = 0, bogus = 1 }

[[learners]]
id = "x"
kind = "mean"

[eval]
baseline_agent = "nobody"
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let p = cfg.run_problems();
        let has = |s: &str| p.iter().any(|m| m.contains(s));
        assert!(has("initial_budget"), "{p:?}");
        assert!(has("`k`"), "{p:?}");
        assert!(has("bogus"), "{p:?}");
        assert!(has("used twice"), "{p:?}");
        assert!(has("gft_csv"), "{p:?}");
        assert!(has("nobody"), "{p:?}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("seed = 3").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
