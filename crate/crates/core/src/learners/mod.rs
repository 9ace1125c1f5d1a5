//! Base regression models wrapped by market agents.
//!
//! Every learner is refit from scratch on the growing history window each
//! week. `fit` is a pure function of `(spec, history, seed)`.

mod knn;
mod linear;
mod tree;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{pattern_matches, TimeSeriesFrame};
use crate::ingest::CDC_ILI;

pub use knn::KnnModel;
pub use linear::LinearModel;
pub use tree::{RegressionTree, TreeParams};

/// Condition-number threshold above which `ols` switches to a ridge solve.
pub const OLS_CONDITION_LIMIT: f64 = 1e12;
/// Ridge penalty used by the `ols` singularity fallback.
pub const OLS_FALLBACK_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ols,
    Ridge,
    Knn,
    Cart,
    BaggedTree,
    Mean,
    Persistence,
    Passthrough,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 8] = [
        LearnerKind::Ols,
        LearnerKind::Ridge,
        LearnerKind::Knn,
        LearnerKind::Cart,
        LearnerKind::BaggedTree,
        LearnerKind::Mean,
        LearnerKind::Persistence,
        LearnerKind::Passthrough,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Ols => "ols",
            LearnerKind::Ridge => "ridge",
            LearnerKind::Knn => "knn",
            LearnerKind::Cart => "cart",
            LearnerKind::BaggedTree => "bagged_tree",
            LearnerKind::Mean => "mean",
            LearnerKind::Persistence => "persistence",
            LearnerKind::Passthrough => "passthrough",
        }
    }

    /// Hyperparameter names and defaults accepted by this kind.
    pub fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            LearnerKind::Ols | LearnerKind::Mean | LearnerKind::Persistence => &[],
            LearnerKind::Ridge => &[("lambda", 1e-3)],
            LearnerKind::Knn => &[("k", 5.0)],
            LearnerKind::Cart => &[("max_depth", 4.0), ("min_leaf", 5.0)],
            LearnerKind::BaggedTree => &[
                ("n_trees", 25.0),
                ("bootstrap_fraction", 1.0),
                ("max_depth", 4.0),
                ("min_leaf", 5.0),
            ],
            LearnerKind::Passthrough => &[("scale", 1.0)],
        }
    }

    fn is_linear(self) -> bool {
        matches!(self, LearnerKind::Ols | LearnerKind::Ridge)
    }

    /// Emits a designated column instead of learning from history.
    pub fn is_column_emitter(self) -> bool {
        matches!(self, LearnerKind::Persistence | LearnerKind::Passthrough)
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    #[serde(default, alias = "params")]
    pub hyperparameters: BTreeMap<String, f64>,
    /// Column names or `*` patterns. For `persistence` and `passthrough` this
    /// names the single emitted column.
    #[serde(default, alias = "features")]
    pub feature_mask: Vec<String>,
    /// z-score features on the training window.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        LearnerSpec {
            kind,
            hyperparameters: BTreeMap::new(),
            feature_mask: match kind {
                LearnerKind::Persistence => vec![CDC_ILI.to_string()],
                LearnerKind::Passthrough => Vec::new(),
                _ => vec!["*".to_string()],
            },
            standardize: true,
        }
    }

    pub fn with_features(mut self, mask: &[&str]) -> Self {
        self.feature_mask = mask.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.hyperparameters.insert(name.to_string(), value);
        self
    }

    pub fn with_standardize(mut self, standardize: bool) -> Self {
        self.standardize = standardize;
        self
    }

    /// Hyperparameter value, falling back to the kind's default.
    pub fn param(&self, name: &str) -> f64 {
        self.hyperparameters.get(name).copied().unwrap_or_else(|| {
            self.kind
                .defaults()
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN)
        })
    }

    /// Every problem with this spec, or `Ok` if none.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        let kind = self.kind;
        let known = kind.defaults();
        for (name, value) in &self.hyperparameters {
            if !known.iter().any(|(n, _)| n == name) {
                problems.push(format!("{kind}: unknown hyperparameter `{name}`"));
            } else if !value.is_finite() {
                problems.push(format!("{kind}: hyperparameter `{name}` is not finite"));
            }
        }
        let positive_int = |name: &str, problems: &mut Vec<String>| {
            let v = self.param(name);
            if !(v >= 1.0 && v.fract() == 0.0) {
                problems.push(format!("{kind}: `{name}` must be a positive integer, got {v}"));
            }
        };
        match kind {
            LearnerKind::Ridge if self.param("lambda") < 0.0 => {
                problems.push(format!("{kind}: `lambda` must be >= 0"));
            }
            LearnerKind::Knn => positive_int("k", &mut problems),
            LearnerKind::Cart => {
                positive_int("max_depth", &mut problems);
                positive_int("min_leaf", &mut problems);
            }
            LearnerKind::BaggedTree => {
                positive_int("n_trees", &mut problems);
                positive_int("max_depth", &mut problems);
                positive_int("min_leaf", &mut problems);
                let f = self.param("bootstrap_fraction");
                if !(f > 0.0 && f <= 1.0) {
                    problems.push(format!("{kind}: `bootstrap_fraction` must be in (0, 1]"));
                }
            }
            _ => {}
        }
        if kind.is_column_emitter() {
            if self.feature_mask.len() != 1 || self.feature_mask[0].contains('*') {
                problems.push(format!("{kind}: feature mask must name exactly one column"));
            }
        } else if self.feature_mask.is_empty() {
            problems.push(format!("{kind}: feature mask is empty"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    /// Indices of `columns` selected by the mask, in column order.
    pub fn resolve_mask(&self, columns: &[&str]) -> Result<Vec<usize>> {
        let idx: Vec<usize> = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| self.feature_mask.iter().any(|p| pattern_matches(p, c)))
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::config(format!(
                "{}: feature mask {:?} matches no column",
                self.kind, self.feature_mask
            )));
        }
        if self.kind.is_column_emitter() && idx.len() != 1 {
            return Err(Error::config(format!(
                "{}: feature mask {:?} must match exactly one column",
                self.kind, self.feature_mask
            )));
        }
        Ok(idx)
    }

    /// Rows of history needed before the learner is warm.
    pub fn min_history(&self, n_features: usize) -> usize {
        if self.kind.is_column_emitter() {
            0
        } else if self.kind.is_linear() {
            4.max(n_features + 1)
        } else {
            4
        }
    }
}

/// Training rows for one learner: features already restricted to its mask.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Linear(LinearModel),
    Knn(KnnModel),
    Tree(RegressionTree),
    Bagged(Vec<RegressionTree>),
    Constant(f64),
    /// Emits feature 0 multiplied by `scale`.
    Column { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fit {
    Warm(FittedModel),
    /// Not enough history; the agent abstains.
    Cold { needed: usize, have: usize },
}

impl Fit {
    pub fn model(&self) -> Option<&FittedModel> {
        match self {
            Fit::Warm(m) => Some(m),
            Fit::Cold { .. } => None,
        }
    }
}

/// Fits `spec` on masked training rows. `seed` only matters for `bagged_tree`.
pub fn fit_rows(spec: &LearnerSpec, data: TrainingSet<'_>, seed: u64) -> Result<Fit> {
    let n = data.x.len();
    if data.y.len() != n {
        return Err(Error::Learner(format!("{} feature rows for {} targets", n, data.y.len())));
    }
    let p = data.x.first().map_or(0, Vec::len);
    let needed = spec.min_history(p);
    if n < needed {
        return Ok(Fit::Cold { needed, have: n });
    }
    let model = match spec.kind {
        LearnerKind::Ols => FittedModel::Linear(LinearModel::fit_ols(data, spec.standardize)?),
        LearnerKind::Ridge => {
            FittedModel::Linear(LinearModel::fit_ridge(data, spec.param("lambda"), spec.standardize)?)
        }
        LearnerKind::Knn => FittedModel::Knn(KnnModel::fit(data, spec.param("k") as usize, spec.standardize)),
        LearnerKind::Cart => FittedModel::Tree(RegressionTree::fit(data, None, tree_params(spec))),
        LearnerKind::BaggedTree => FittedModel::Bagged(tree::fit_bagged(
            data,
            tree_params(spec),
            spec.param("n_trees") as usize,
            spec.param("bootstrap_fraction"),
            seed,
        )),
        LearnerKind::Mean => FittedModel::Constant(data.y.iter().sum::<f64>() / n as f64),
        LearnerKind::Persistence => FittedModel::Column { scale: 1.0 },
        LearnerKind::Passthrough => FittedModel::Column {
            scale: spec.param("scale"),
        },
    };
    Ok(Fit::Warm(model))
}

/// Fits `spec` on a history frame (all rows are treated as training weeks).
/// Rows where the target or a masked feature is missing are skipped.
pub fn fit(spec: &LearnerSpec, history: &TimeSeriesFrame, seed: u64) -> Result<Fit> {
    let names = history.column_names();
    let mask = spec.resolve_mask(&names)?;
    let (x, y) = masked_rows(history, &mask);
    fit_rows(spec, TrainingSet { x: &x, y: &y }, seed)
}

/// Complete `(features, target)` rows of `frame` restricted to `mask`.
pub fn masked_rows(frame: &TimeSeriesFrame, mask: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let Some(target) = frame.target() else {
        return (Vec::new(), Vec::new());
    };
    let cols = frame.columns();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, t) in target.iter().enumerate() {
        let Some(t) = t else { continue };
        let row: Option<Vec<f64>> = mask.iter().map(|&j| cols[j].values[i]).collect();
        if let Some(row) = row {
            x.push(row);
            y.push(*t);
        }
    }
    (x, y)
}

impl FittedModel {
    /// Prediction for one masked feature row, clamped to `[0, 1]`.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        let raw = match self {
            FittedModel::Linear(m) => m.predict(features),
            FittedModel::Knn(m) => m.predict(features),
            FittedModel::Tree(t) => t.predict(features),
            FittedModel::Bagged(trees) => {
                trees.iter().map(|t| t.predict(features)).sum::<f64>() / trees.len() as f64
            }
            FittedModel::Constant(c) => *c,
            FittedModel::Column { scale } => {
                features.first().copied().unwrap_or(f64::NAN) * scale
            }
        };
        if !raw.is_finite() {
            return Err(Error::Learner(format!("non-finite prediction {raw}")));
        }
        Ok(raw.clamp(0.0, 1.0))
    }
}

fn tree_params(spec: &LearnerSpec) -> TreeParams {
    TreeParams {
        max_depth: spec.param("max_depth") as usize,
        min_leaf: spec.param("min_leaf") as usize,
    }
}

/// Per-feature mean and scale over the training rows. The scale is the
/// population standard deviation, or 1 when standardization is off or the
/// feature is constant.
pub(crate) fn column_stats(x: &[Vec<f64>], standardize: bool) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let p = x.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; p];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![1.0; p];
    if standardize {
        for (j, s) in scale.iter_mut().enumerate() {
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean[j].abs()) {
                *s = sd;
            }
        }
    }
    (mean, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set<'a>(x: &'a [Vec<f64>], y: &'a [f64]) -> TrainingSet<'a> {
        TrainingSet { x, y }
    }

    #[test]
    fn unknown_hyperparameter_rejected() {
        let spec = LearnerSpec::new(LearnerKind::Knn).with_param("depth", 3.0);
        let err = spec.validate().unwrap_err();
        assert!(err[0].contains("unknown hyperparameter `depth`"));
        assert!(LearnerSpec::new(LearnerKind::Knn).with_param("k", 2.5).validate().is_err());
        assert!(LearnerSpec::new(LearnerKind::Ridge).with_param("lambda", 0.5).validate().is_ok());
    }

    #[test]
    fn mask_rules() {
        assert!(LearnerSpec::new(LearnerKind::Ols).with_features(&[]).validate().is_err());
        assert!(LearnerSpec::new(LearnerKind::Persistence).validate().is_ok());
        assert!(LearnerSpec::new(LearnerKind::Passthrough).validate().is_err());
        assert!(LearnerSpec::new(LearnerKind::Passthrough).with_features(&["GP"]).validate().is_ok());
        assert!(LearnerSpec::new(LearnerKind::Passthrough).with_features(&["G*"]).validate().is_err());
    }

    #[test]
    fn cold_until_enough_rows() {
        let x: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 1.0]).collect();
        let y = [0.1, 0.2, 0.3];
        let fit = fit_rows(&LearnerSpec::new(LearnerKind::Ols), set(&x, &y), 0).unwrap();
        assert_eq!(fit, Fit::Cold { needed: 4, have: 3 });
        let fit = fit_rows(&LearnerSpec::new(LearnerKind::Mean), set(&x, &y), 0).unwrap();
        assert!(matches!(fit, Fit::Cold { .. }));
        // Column emitters are warm with no history at all.
        let fit = fit_rows(&LearnerSpec::new(LearnerKind::Persistence), set(&[], &[]), 0).unwrap();
        assert!(matches!(fit, Fit::Warm(_)));
    }

    #[test]
    fn linear_kinds_need_k_plus_one_rows() {
        let spec = LearnerSpec::new(LearnerKind::Ridge);
        assert_eq!(spec.min_history(10), 11);
        assert_eq!(spec.min_history(2), 4);
        assert_eq!(LearnerSpec::new(LearnerKind::Knn).min_history(10), 4);
    }

    #[test]
    fn mean_model() {
        let x = vec![vec![0.0]; 4];
        let y = [0.01, 0.03, 0.01, 0.03];
        let fit = fit_rows(&LearnerSpec::new(LearnerKind::Mean), set(&x, &y), 0).unwrap();
        let p = fit.model().unwrap().predict(&[0.0]).unwrap();
        assert!((p - 0.02).abs() < 1e-15);
    }

    #[test]
    fn persistence_and_passthrough_emit_their_column() {
        let fit = fit_rows(&LearnerSpec::new(LearnerKind::Persistence), set(&[], &[]), 0).unwrap();
        assert_eq!(fit.model().unwrap().predict(&[0.0173]).unwrap(), 0.0173);
        let spec = LearnerSpec::new(LearnerKind::Passthrough).with_features(&["GP"]);
        let fit = fit_rows(&spec, set(&[], &[]), 0).unwrap();
        assert_eq!(fit.model().unwrap().predict(&[0.0231]).unwrap(), 0.0231);
        let spec = spec.with_param("scale", 1e-5);
        let fit = fit_rows(&spec, set(&[], &[]), 0).unwrap();
        assert!((fit.model().unwrap().predict(&[1500.0]).unwrap() - 0.015).abs() < 1e-15);
    }

    #[test]
    fn predictions_are_clamped_and_nan_rejected() {
        let m = FittedModel::Constant(1.7);
        assert_eq!(m.predict(&[]).unwrap(), 1.0);
        let m = FittedModel::Constant(-0.2);
        assert_eq!(m.predict(&[]).unwrap(), 0.0);
        let m = FittedModel::Column { scale: 1.0 };
        assert!(m.predict(&[f64::NAN]).is_err());
    }

    #[test]
    fn fit_from_frame_uses_mask() {
        use crate::frame::Column;
        use chrono::{Duration, NaiveDate};
        let start = NaiveDate::from_ymd_opt(2004, 1, 4).unwrap();
        let weeks: Vec<_> = (0..6).map(|i| start + Duration::weeks(i)).collect();
        let xs: Vec<Option<f64>> = (0..6).map(|i| Some(i as f64)).collect();
        let noise: Vec<Option<f64>> = (0..6).map(|i| Some(((i * 7) % 5) as f64)).collect();
        let y: Vec<Option<f64>> = (0..6).map(|i| Some(0.01 * i as f64 + 0.02)).collect();
        let frame = TimeSeriesFrame::new(
            weeks,
            vec![Column::new("x", xs), Column::new("noise", noise)],
            Some(y),
        )
        .unwrap();
        let spec = LearnerSpec::new(LearnerKind::Ols).with_features(&["x"]);
        let fit = fit(&spec, &frame, 0).unwrap();
        let p = fit.model().unwrap().predict(&[10.0]).unwrap();
        assert!((p - 0.12).abs() < 1e-12);
    }
}
