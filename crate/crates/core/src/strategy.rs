//! Tabular Q-learning trading strategy. After round 1 an agent sees the
//! interim clearing price and decides whether to keep its own prediction,
//! move halfway toward the price, or adopt it.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Cut points of `(interim - own) / sigma` separating the five deviation bins.
pub const DEVIATION_CUTS: [f64; 4] = [-2.0, -0.5, 0.5, 2.0];
pub const DEVIATION_BINS: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Preserve,
    Average,
    Follow,
}

impl Action {
    /// Tie-break order for the greedy choice.
    pub const ALL: [Action; 3] = [Action::Preserve, Action::Average, Action::Follow];

    fn name(self) -> &'static str {
        match self {
            Action::Preserve => "preserve",
            Action::Average => "average",
            Action::Follow => "follow",
        }
    }

    fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetTrend {
    Falling,
    Flat,
    Rising,
}

impl BudgetTrend {
    pub const ALL: [BudgetTrend; 3] = [BudgetTrend::Falling, BudgetTrend::Flat, BudgetTrend::Rising];

    fn name(self) -> &'static str {
        match self {
            BudgetTrend::Falling => "falling",
            BudgetTrend::Flat => "flat",
            BudgetTrend::Rising => "rising",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QState {
    pub round: u8,
    pub deviation_bin: u8,
    pub trend: BudgetTrend,
}

impl QState {
    pub fn new(round: u8, interim: f64, own: f64, sigma: f64, trend: BudgetTrend) -> Self {
        QState {
            round,
            deviation_bin: deviation_bin((interim - own) / sigma),
            trend,
        }
    }

    /// All `5 x 3` states of one round.
    pub fn all_for_round(round: u8) -> Vec<QState> {
        (0..DEVIATION_BINS)
            .flat_map(|b| {
                BudgetTrend::ALL.into_iter().map(move |trend| QState {
                    round,
                    deviation_bin: b,
                    trend,
                })
            })
            .collect()
    }
}

/// Bin of a normalized deviation: `(-inf,-2) [-2,-0.5) [-0.5,0.5] (0.5,2] (2,inf)`.
pub fn deviation_bin(d: f64) -> u8 {
    if d < DEVIATION_CUTS[0] {
        0
    } else if d < DEVIATION_CUTS[1] {
        1
    } else if d <= DEVIATION_CUTS[2] {
        2
    } else if d <= DEVIATION_CUTS[3] {
        3
    } else {
        4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Multiplicative decay applied to epsilon once per week.
    pub epsilon_decay: f64,
    /// Number of settlements the budget trend looks back over.
    pub trend_window: usize,
    /// Relative budget change treated as flat.
    pub flat_band: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.2,
            epsilon_decay: 0.995,
            trend_window: 4,
            flat_band: 0.01,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            problems.push(format!("strategy.alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            problems.push(format!("strategy.gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            problems.push(format!("strategy.epsilon must be in [0, 1], got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            problems.push(format!(
                "strategy.epsilon_decay must be in [0, 1], got {}",
                self.epsilon_decay
            ));
        }
        if self.trend_window == 0 {
            problems.push("strategy.trend_window must be >= 1".to_string());
        }
        if !(self.flat_band >= 0.0) {
            problems.push("strategy.flat_band must be >= 0".to_string());
        }
        problems
    }
}

/// Direction of the budget over the last `window` settlements. `history`
/// holds post-settlement budgets, oldest first.
pub fn budget_trend(history: &[f64], window: usize, flat_band: f64) -> BudgetTrend {
    if history.len() < 2 {
        return BudgetTrend::Flat;
    }
    let last = history[history.len() - 1];
    let first = history[history.len().saturating_sub(window + 1)];
    if first <= 0.0 {
        return BudgetTrend::Flat;
    }
    let change = (last - first) / first;
    if change > flat_band {
        BudgetTrend::Rising
    } else if change < -flat_band {
        BudgetTrend::Falling
    } else {
        BudgetTrend::Flat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "QTableRepr", try_from = "QTableRepr")]
pub struct QTable {
    values: BTreeMap<(QState, Action), f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
}

impl QTable {
    pub fn new(config: &StrategyConfig) -> Self {
        QTable {
            values: BTreeMap::new(),
            alpha: config.alpha,
            gamma: config.gamma,
            epsilon: config.epsilon,
            epsilon_decay: config.epsilon_decay,
        }
    }

    pub fn value(&self, state: QState, action: Action) -> f64 {
        self.values.get(&(state, action)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, state: QState, action: Action, value: f64) {
        self.values.insert((state, action), value);
    }

    pub fn best_value(&self, state: QState) -> f64 {
        Action::ALL
            .into_iter()
            .map(|a| self.value(state, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; ties go to the earliest action in [`Action::ALL`].
    pub fn greedy(&self, state: QState) -> Action {
        let mut best = Action::Preserve;
        let mut best_v = self.value(state, best);
        for a in &Action::ALL[1..] {
            let v = self.value(state, *a);
            if v > best_v {
                best = *a;
                best_v = v;
            }
        }
        best
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(QState, Action), &f64)> {
        self.values.iter()
    }

    pub fn decay_epsilon(&mut self) {
        self.epsilon *= self.epsilon_decay;
    }
}

/// Epsilon-greedy selection. Two draws are taken per call regardless of the
/// branch so the random stream does not depend on Q-values.
pub fn choose_action<R: Rng + ?Sized>(state: QState, table: &QTable, rng: &mut R) -> Action {
    let explore = rng.random::<f64>() < table.epsilon;
    let pick = rng.random_range(0..Action::ALL.len());
    if explore {
        Action::ALL[pick]
    } else {
        table.greedy(state)
    }
}

pub fn apply_action(action: Action, own: f64, interim: f64) -> f64 {
    match action {
        Action::Preserve => own,
        Action::Average => (own + interim) / 2.0,
        Action::Follow => interim,
    }
}

/// Relative net profit of a week, clamped to `[-1, 1]`.
pub fn reward(payoff: f64, stake: f64) -> f64 {
    ((payoff - stake) / stake).clamp(-1.0, 1.0)
}

/// One-step Q-learning backup. `next` is the state observed in the following
/// week (none at the end of a run). Returns false, leaving the table intact,
/// when the reward is not finite.
pub fn update(table: &mut QTable, state: QState, action: Action, reward: f64, next: Option<QState>) -> bool {
    if !reward.is_finite() {
        log::warn!("skipping Q update for {state:?}/{action}: non-finite reward {reward}");
        return false;
    }
    let reward = reward.clamp(-1.0, 1.0);
    let bootstrap = next.map_or(0.0, |s| table.best_value(s));
    let old = table.value(state, action);
    let new = old + table.alpha * (reward + table.gamma * bootstrap - old);
    table.set(state, action, new);
    true
}

/// String-keyed form used for checkpoints: `r<round>/d<bin>/<trend>/<action>`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QTableRepr {
    alpha: f64,
    gamma: f64,
    epsilon: f64,
    epsilon_decay: f64,
    values: BTreeMap<String, f64>,
}

impl From<QTable> for QTableRepr {
    fn from(t: QTable) -> Self {
        QTableRepr {
            alpha: t.alpha,
            gamma: t.gamma,
            epsilon: t.epsilon,
            epsilon_decay: t.epsilon_decay,
            values: t
                .values
                .iter()
                .map(|((s, a), v)| {
                    (
                        format!("r{}/d{}/{}/{}", s.round, s.deviation_bin, s.trend.name(), a.name()),
                        *v,
                    )
                })
                .collect(),
        }
    }
}

impl TryFrom<QTableRepr> for QTable {
    type Error = String;

    fn try_from(r: QTableRepr) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (key, v) in r.values {
            let bad = || format!("malformed Q-table key `{key}`");
            let parts: Vec<&str> = key.split('/').collect();
            if parts.len() != 4 {
                return Err(bad());
            }
            let round = parts[0].strip_prefix('r').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let deviation_bin: u8 = parts[1].strip_prefix('d').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if deviation_bin >= DEVIATION_BINS {
                return Err(bad());
            }
            let trend = BudgetTrend::ALL
                .into_iter()
                .find(|t| t.name() == parts[2])
                .ok_or_else(bad)?;
            let action = Action::parse(parts[3]).ok_or_else(bad)?;
            values.insert((QState { round, deviation_bin, trend }, action), v);
        }
        Ok(QTable {
            values,
            alpha: r.alpha,
            gamma: r.gamma,
            epsilon: r.epsilon,
            epsilon_decay: r.epsilon_decay,
        })
    }
}
