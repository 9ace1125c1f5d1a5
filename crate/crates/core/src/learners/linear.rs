use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{column_stats, TrainingSet, OLS_CONDITION_LIMIT, OLS_FALLBACK_LAMBDA};
use crate::error::{Error, Result};

/// Linear model `y = intercept + slopes . x`, slopes in original feature units.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub slopes: Vec<f64>,
    pub intercept: f64,
    /// Ridge penalty actually applied (0 for a plain least-squares solve).
    pub lambda: f64,
}

impl LinearModel {
    /// Least squares with intercept. Falls back to a tiny ridge penalty when
    /// the centered Gram matrix is singular or badly conditioned.
    pub fn fit_ols(data: TrainingSet<'_>, standardize: bool) -> Result<Self> {
        let (gram, rhs, mean, scale, y_mean) = normal_equations(data, standardize);
        let lambda = if well_conditioned(&gram) { 0.0 } else { OLS_FALLBACK_LAMBDA };
        match solve(gram.clone(), rhs.clone(), lambda, &mean, &scale, y_mean) {
            Err(_) if lambda == 0.0 => {
                solve(gram, rhs, OLS_FALLBACK_LAMBDA, &mean, &scale, y_mean)
            }
            other => other,
        }
    }

    pub fn fit_ridge(data: TrainingSet<'_>, lambda: f64, standardize: bool) -> Result<Self> {
        let (gram, rhs, mean, scale, y_mean) = normal_equations(data, standardize);
        solve(gram, rhs, lambda, &mean, &scale, y_mean)
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept
            + self
                .slopes
                .iter()
                .zip(features)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

type NormalEquations = (DMatrix<f64>, DVector<f64>, Vec<f64>, Vec<f64>, f64);

/// Gram matrix and right-hand side of the centered (and optionally scaled) design.
fn normal_equations(data: TrainingSet<'_>, standardize: bool) -> NormalEquations {
    let n = data.x.len();
    let p = data.x.first().map_or(0, Vec::len);
    let (mean, scale) = column_stats(data.x, standardize);
    let y_mean = data.y.iter().sum::<f64>() / n as f64;
    let design = DMatrix::from_fn(n, p, |i, j| (data.x[i][j] - mean[j]) / scale[j]);
    let centered_y = DVector::from_iterator(n, data.y.iter().map(|y| y - y_mean));
    let gram = design.tr_mul(&design);
    let rhs = design.tr_mul(&centered_y);
    (gram, rhs, mean, scale, y_mean)
}

fn well_conditioned(gram: &DMatrix<f64>) -> bool {
    if gram.nrows() == 0 {
        return true;
    }
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    min > 0.0 && max / min <= OLS_CONDITION_LIMIT
}

fn solve(
    mut gram: DMatrix<f64>,
    rhs: DVector<f64>,
    lambda: f64,
    mean: &[f64],
    scale: &[f64],
    y_mean: f64,
) -> Result<LinearModel> {
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let beta = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Learner("normal equations not positive definite".into()))?;
    let slopes: Vec<f64> = beta.iter().zip(scale).map(|(b, s)| b / s).collect();
    let intercept = y_mean - slopes.iter().zip(mean).map(|(b, m)| b * m).sum::<f64>();
    if !intercept.is_finite() || slopes.iter().any(|b| !b.is_finite()) {
        return Err(Error::Learner("non-finite regression coefficients".into()));
    }
    Ok(LinearModel {
        slopes,
        intercept,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line_recovered() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| 2.0 * i as f64 + 1.0).collect();
        for standardize in [false, true] {
            let m = LinearModel::fit_ols(TrainingSet { x: &x, y: &y }, standardize).unwrap();
            assert!((m.slopes[0] - 2.0).abs() < 1e-9, "{m:?}");
            assert!((m.intercept - 1.0).abs() < 1e-9, "{m:?}");
            assert_eq!(m.lambda, 0.0);
        }
    }

    #[test]
    fn collinear_columns_fall_back_to_ridge() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..8).map(|i| 0.01 * i as f64).collect();
        let m = LinearModel::fit_ols(TrainingSet { x: &x, y: &y }, true).unwrap();
        assert_eq!(m.lambda, OLS_FALLBACK_LAMBDA);
        assert!((m.predict(&[3.0, 6.0]) - 0.03).abs() < 1e-6);
    }

    #[test]
    fn ridge_shrinks_toward_mean() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let data = TrainingSet { x: &x, y: &y };
        let weak = LinearModel::fit_ridge(data, 1e-3, true).unwrap();
        let strong = LinearModel::fit_ridge(data, 1e3, true).unwrap();
        assert!((weak.slopes[0] - 1.0).abs() < 1e-3);
        assert!(strong.slopes[0] < 0.1);
    }

    proptest! {
        #[test]
        fn noiseless_model_recovered(
            coefs in prop::collection::vec(-5.0f64..5.0, 3),
            intercept in -1.0f64..1.0,
            seed in 0u64..1000,
        ) {
            // Deterministic well-spread design.
            let n = 12;
            let x: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..3).map(|j| {
                    let k = (i * 7 + j * 13 + seed as usize) % 17;
                    k as f64 + (i * j) as f64 * 0.25
                }).collect())
                .collect();
            let y: Vec<f64> = x.iter()
                .map(|r| intercept + r.iter().zip(&coefs).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = LinearModel::fit_ols(TrainingSet { x: &x, y: &y }, true).unwrap();
            prop_assume!(m.lambda == 0.0);
            for (got, want) in m.slopes.iter().zip(&coefs) {
                prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{got} vs {want}");
            }
        }
    }
}
