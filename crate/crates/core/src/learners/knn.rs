use super::{column_stats, TrainingSet};

/// k-nearest-neighbour regressor over (optionally z-scored) Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    points: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl KnnModel {
    pub fn fit(data: TrainingSet<'_>, k: usize, standardize: bool) -> Self {
        let (mean, scale) = column_stats(data.x, standardize);
        let points = data
            .x
            .iter()
            .map(|r| normalize(r, &mean, &scale))
            .collect();
        KnnModel {
            k: k.max(1).min(data.x.len()),
            mean,
            scale,
            points,
            targets: data.y.to_vec(),
        }
    }

    /// Indices of the k nearest training rows; ties broken by row order.
    pub fn neighbours(&self, features: &[f64]) -> Vec<usize> {
        let q = normalize(features, &self.mean, &self.scale);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.into_iter().take(self.k).map(|(_, i)| i).collect()
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let nb = self.neighbours(features);
        nb.iter().map(|&i| self.targets[i]).sum::<f64>() / nb.len() as f64
    }
}

fn normalize(row: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(mean.iter().zip(scale))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}
