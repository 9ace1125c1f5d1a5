use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainingSet;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART regression tree (squared-error splits) grown breadth-first.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Stats {
    weight: f64,
    sum: f64,
    sum_sq: f64,
}

impl Stats {
    fn sse(&self) -> f64 {
        (self.sum_sq - self.sum * self.sum / self.weight).max(0.0)
    }

    /// Zero up to cancellation error in the running sums.
    fn is_pure(&self) -> bool {
        self.sse() <= 1e-12 * self.sum_sq
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

const UNASSIGNED: usize = usize::MAX;

impl RegressionTree {
    /// Grows a tree; `weights` are per-row multiplicities (bootstrap counts).
    pub fn fit(data: TrainingSet<'_>, weights: Option<&[u32]>, params: TreeParams) -> Self {
        let order = presort(data.x);
        let ones;
        let weights = match weights {
            Some(w) => w,
            None => {
                ones = vec![1u32; data.x.len()];
                &ones
            }
        };
        grow(data, &order, weights, params)
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

/// Row indices sorted by value, per feature (ties by row index).
fn presort(x: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let p = x.first().map_or(0, Vec::len);
    (0..p)
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

fn grow(data: TrainingSet<'_>, order: &[Vec<usize>], weights: &[u32], params: TreeParams) -> RegressionTree {
    let n = data.x.len();
    let min_leaf = params.min_leaf.max(1) as f64;
    let mut assign: Vec<usize> = weights.iter().map(|&w| if w > 0 { 0 } else { UNASSIGNED }).collect();
    let mut stats = vec![node_stats(data.y, weights, &assign, 0)];
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut frontier = vec![0usize];

    for _depth in 0..params.max_depth {
        // Slot of each splittable frontier node, indexed by node id.
        let mut slot = vec![UNASSIGNED; nodes.len()];
        let mut open = Vec::new();
        for &m in &frontier {
            if stats[m].weight >= 2.0 * min_leaf && !stats[m].is_pure() {
                slot[m] = open.len();
                open.push(m);
            }
        }
        if open.is_empty() {
            break;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        for (f, sorted) in order.iter().enumerate() {
            let mut left_w = vec![0.0; open.len()];
            let mut left_s = vec![0.0; open.len()];
            let mut prev: Vec<Option<f64>> = vec![None; open.len()];
            for &i in sorted {
                let m = assign[i];
                if m == UNASSIGNED || slot[m] == UNASSIGNED {
                    continue;
                }
                let k = slot[m];
                let x = data.x[i][f];
                if let Some(px) = prev[k] {
                    let st = &stats[m];
                    let wl = left_w[k];
                    let wr = st.weight - wl;
                    if x > px && wl >= min_leaf && wr >= min_leaf {
                        let sl = left_s[k];
                        let sr = st.sum - sl;
                        let gain = sl * sl / wl + sr * sr / wr - st.sum * st.sum / st.weight;
                        if gain > 1e-12 * st.sse() && best[k].is_none_or(|b| gain > b.gain) {
                            let mid = px + (x - px) / 2.0;
                            let threshold = if mid < x { mid } else { px };
                            best[k] = Some(Candidate {
                                feature: f,
                                threshold,
                                gain,
                            });
                        }
                    }
                }
                let w = weights[i] as f64;
                left_w[k] += w;
                left_s[k] += w * data.y[i];
                prev[k] = Some(x);
            }
        }

        let mut next = Vec::new();
        let mut child_of = vec![(UNASSIGNED, UNASSIGNED); open.len()];
        for (k, &m) in open.iter().enumerate() {
            if let Some(c) = best[k] {
                let left = nodes.len();
                let right = left + 1;
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[m] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
                child_of[k] = (left, right);
                next.push(left);
                next.push(right);
            }
        }
        for i in 0..n {
            let m = assign[i];
            if m == UNASSIGNED {
                continue;
            }
            let k = if m < slot.len() { slot[m] } else { UNASSIGNED };
            if k == UNASSIGNED || child_of[k].0 == UNASSIGNED {
                assign[i] = UNASSIGNED;
                continue;
            }
            let Node::Split { feature, threshold, .. } = nodes[m] else { unreachable!() };
            assign[i] = if data.x[i][feature] <= threshold { child_of[k].0 } else { child_of[k].1 };
        }
        stats.resize_with(nodes.len(), || Stats { weight: 0.0, sum: 0.0, sum_sq: 0.0 });
        for &c in &next {
            stats[c] = node_stats(data.y, weights, &assign, c);
        }
        // Frontier nodes that were not split keep their leaf value below.
        for &m in &frontier {
            if matches!(nodes[m], Node::Leaf(_)) {
                nodes[m] = Node::Leaf(stats[m].sum / stats[m].weight);
            }
        }
        frontier = next;
    }
    for &m in &frontier {
        nodes[m] = Node::Leaf(stats[m].sum / stats[m].weight);
    }
    RegressionTree { nodes }
}

fn node_stats(y: &[f64], weights: &[u32], assign: &[usize], node: usize) -> Stats {
    let mut st = Stats { weight: 0.0, sum: 0.0, sum_sq: 0.0 };
    for (i, &a) in assign.iter().enumerate() {
        if a == node {
            let w = weights[i] as f64;
            st.weight += w;
            st.sum += w * y[i];
            st.sum_sq += w * y[i] * y[i];
        }
    }
    st
}

/// Bootstrap-aggregated trees. Tree `t` draws its bootstrap sample from a
/// ChaCha8 stream seeded by `(seed, history length, t)`.
pub fn fit_bagged(
    data: TrainingSet<'_>,
    params: TreeParams,
    n_trees: usize,
    bootstrap_fraction: f64,
    seed: u64,
) -> Vec<RegressionTree> {
    let n = data.x.len();
    let order = presort(data.x);
    let draws = ((bootstrap_fraction * n as f64).round() as usize).max(1);
    (0..n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[n as u64, t as u64]));
            let mut weights = vec![0u32; n];
            for _ in 0..draws {
                weights[rng.random_range(0..n)] += 1;
            }
            grow(data, &order, &weights, params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: TreeParams = TreeParams { max_depth: 4, min_leaf: 5 };

    #[test]
    fn step_function_split_exactly() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.01 } else { 0.05 }).collect();
        let t = RegressionTree::fit(TrainingSet { x: &x, y: &y }, None, P);
        assert_eq!(t.leaf_count(), 2);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(t.predict(&[3.0]), 0.01));
        assert!(close(t.predict(&[9.4]), 0.01));
        assert!(close(t.predict(&[9.6]), 0.05));
    }

    #[test]
    fn respects_min_leaf_and_depth() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let t = RegressionTree::fit(TrainingSet { x: &x, y: &y }, None, P);
        // 12 rows with min_leaf 5 allow exactly one split.
        assert_eq!(t.leaf_count(), 2);
        let deep = RegressionTree::fit(
            TrainingSet { x: &x, y: &y },
            None,
            TreeParams { max_depth: 10, min_leaf: 1 },
        );
        assert_eq!(deep.leaf_count(), 12);
        for (r, v) in x.iter().zip(&y) {
            assert_eq!(deep.predict(r), *v);
        }
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y = vec![0.02; 15];
        let t = RegressionTree::fit(TrainingSet { x: &x, y: &y }, None, P);
        assert_eq!(t.leaf_count(), 1);
        assert!((t.predict(&[100.0, 0.0]) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn picks_informative_feature() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![((i * 7) % 11) as f64, i as f64]).collect();
        let y: Vec<f64> = (0..30).map(|i| if i < 15 { 0.0 } else { 1.0 }).collect();
        let t = RegressionTree::fit(TrainingSet { x: &x, y: &y }, None, P);
        assert_eq!(t.predict(&[3.0, 2.0]), 0.0);
        assert_eq!(t.predict(&[3.0, 25.0]), 1.0);
    }

    #[test]
    fn bagging_is_seed_deterministic() {
        let x: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64, ((i * 5) % 7) as f64]).collect();
        let y: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin().abs() * 0.1).collect();
        let d = TrainingSet { x: &x, y: &y };
        let a = fit_bagged(d, P, 10, 1.0, 42);
        let b = fit_bagged(d, P, 10, 1.0, 42);
        let c = fit_bagged(d, P, 10, 1.0, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
