//! The weekly continuous artificial prediction market.
//!
//! Each week every active, warm agent stakes part of its budget on its
//! prediction over `R` rounds. The price after each round is the
//! investment-weighted mean of all predictions staked so far; the price after
//! the last round is the market prediction. Once the target is known the
//! whole pot is redistributed in proportion to stake times a Gaussian
//! accuracy score, so budgets flow toward accurate agents.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::seed::derive_seed;
use crate::strategy::{self, Action, QState, QTable, StrategyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundBounds {
    pub min_rpt: f64,
    pub max_rpt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub rounds: Vec<RoundBounds>,
    pub initial_budget: f64,
    /// Width of the Gaussian payoff score, in target units.
    pub payoff_bandwidth: f64,
    /// An agent whose budget drops below `budget_floor * initial_budget` is
    /// deactivated for good.
    pub budget_floor: f64,
    pub strategy: StrategyConfig,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            rounds: vec![
                RoundBounds { min_rpt: 0.90, max_rpt: 0.90 },
                RoundBounds { min_rpt: 0.0001, max_rpt: 0.01 },
            ],
            initial_budget: 100.0,
            payoff_bandwidth: 0.01,
            budget_floor: 1e-9,
            strategy: StrategyConfig::default(),
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.rounds.is_empty() {
            problems.push("market.rounds must contain at least one round".to_string());
        }
        if self.rounds.len() > u8::MAX as usize {
            problems.push("market.rounds: too many rounds".to_string());
        }
        for (i, r) in self.rounds.iter().enumerate() {
            if !(0.0 <= r.min_rpt && r.min_rpt <= r.max_rpt && r.max_rpt <= 1.0) {
                problems.push(format!(
                    "market.rounds[{i}]: need 0 <= min_rpt <= max_rpt <= 1, got {} / {}",
                    r.min_rpt, r.max_rpt
                ));
            }
        }
        if !(self.initial_budget > 0.0 && self.initial_budget.is_finite()) {
            problems.push("market.initial_budget must be positive".to_string());
        }
        if !(self.payoff_bandwidth > 0.0 && self.payoff_bandwidth.is_finite()) {
            problems.push("market.payoff_bandwidth must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.budget_floor) {
            problems.push("market.budget_floor must be in [0, 1)".to_string());
        }
        problems.extend(self.strategy.validate());
        problems
    }
}

/// A stake awaiting a Q-learning backup until the next state of its round is seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingUpdate {
    pub round: u8,
    #[serde(with = "qstate_repr")]
    pub state: QState,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: String,
    pub learner: LearnerSpec,
    pub budget: f64,
    pub q_table: QTable,
    /// False once the budget fell below the floor.
    pub active: bool,
    /// Post-settlement budgets, oldest first, bounded by the trend window.
    pub budget_history: Vec<f64>,
    pub pending: Vec<PendingUpdate>,
}

impl AgentState {
    pub fn new(id: impl Into<String>, learner: LearnerSpec, config: &MarketConfig) -> Self {
        AgentState {
            id: id.into(),
            learner,
            budget: config.initial_budget,
            q_table: QTable::new(&config.strategy),
            active: true,
            budget_history: vec![config.initial_budget],
            pending: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stake {
    pub agent: usize,
    pub prediction: f64,
    pub investment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLedger {
    /// 1-based round number.
    pub round: u8,
    pub stakes: Vec<Stake>,
    /// Clearing price over all stakes of this and earlier rounds.
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub agent: usize,
    pub round: u8,
    pub state: QState,
    pub action: Action,
}

/// Everything traded in one week before the target is known.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekTrades {
    pub week: NaiveDate,
    pub rounds: Vec<RoundLedger>,
    pub decisions: Vec<Decision>,
    pub market_prediction: f64,
    /// No agent staked; `market_prediction` is the last observed target.
    pub fallback: bool,
}

impl WeekTrades {
    pub fn stakes(&self) -> impl Iterator<Item = &Stake> {
        self.rounds.iter().flat_map(|r| r.stakes.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSettlement {
    pub agent: usize,
    pub stake: f64,
    pub payoff: f64,
    pub budget_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    /// Per staking agent, in agent order: (agent, total stake, payoff).
    pub payoffs: Vec<(usize, f64, f64)>,
    /// Every score underflowed; stakes were returned unchanged.
    pub refunded: bool,
}

/// Per-week record written to the ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketOutcome {
    pub week: NaiveDate,
    pub rounds: Vec<RoundLedger>,
    pub decisions: Vec<Decision>,
    pub market_prediction: f64,
    pub target: f64,
    pub settlement: Vec<AgentSettlement>,
    pub fallback: bool,
    pub refunded: bool,
    pub deactivated: Vec<usize>,
}

/// Investment-weighted mean of predictions. Zero-investment entries are
/// ignored; at least one investment must be positive.
pub fn clear(predictions: &[f64], investments: &[f64]) -> Result<f64> {
    if predictions.len() != investments.len() {
        return Err(Error::Clearing(format!(
            "{} predictions for {} investments",
            predictions.len(),
            investments.len()
        )));
    }
    if let Some(v) = investments.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Clearing(format!("invalid investment {v}")));
    }
    if let Some(p) = predictions.iter().find(|p| !p.is_finite()) {
        return Err(Error::Clearing(format!("invalid prediction {p}")));
    }
    let funded = || predictions.iter().zip(investments).filter(|(_, v)| **v > 0.0);
    let Some((&anchor, _)) = funded().next() else {
        return Err(Error::Clearing("no positive investment".to_string()));
    };
    let total: f64 = investments.iter().sum();
    // Weighted mean of offsets from one of the predictions, so identical
    // predictions clear to exactly that value.
    let offset: f64 = funded().map(|(p, v)| v * (p - anchor)).sum::<f64>() / total;
    let lo = funded().map(|(p, _)| *p).fold(f64::INFINITY, f64::min);
    let hi = funded().map(|(p, _)| *p).fold(f64::NEG_INFINITY, f64::max);
    Ok((anchor + offset).clamp(lo, hi))
}

/// Gaussian accuracy score of one stake.
pub fn score(prediction: f64, target: f64, bandwidth: f64) -> f64 {
    let e = prediction - target;
    (-(e * e) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Redistributes the pot (sum of all stakes) in proportion to
/// `stake x score`, summed per agent over rounds. If the total weight
/// underflows (zero or subnormal) every stake is refunded instead.
pub fn settle(stakes: &[Stake], target: f64, bandwidth: f64) -> Result<Settlement> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Numerical(format!("target {target} outside [0, 1]")));
    }
    let mut per_agent: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for s in stakes {
        let e = per_agent.entry(s.agent).or_insert((0.0, 0.0));
        e.0 += s.investment;
        e.1 += s.investment * score(s.prediction, target, bandwidth);
    }
    let pot: f64 = per_agent.values().map(|(v, _)| v).sum();
    let weight: f64 = per_agent.values().map(|(_, w)| w).sum();
    if weight >= f64::MIN_POSITIVE && weight.is_finite() {
        let payoffs = per_agent
            .into_iter()
            .map(|(a, (v, w))| (a, v, pot * (w / weight)))
            .collect();
        Ok(Settlement { payoffs, refunded: false })
    } else {
        Ok(Settlement {
            payoffs: per_agent.into_iter().map(|(a, (v, _))| (a, v, v)).collect(),
            refunded: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub config: MarketConfig,
    agents: Vec<AgentState>,
    master_seed: u64,
    /// Number of weeks settled so far.
    week_index: u64,
    last_target: Option<f64>,
}

impl Market {
    pub fn new(config: MarketConfig, agents: Vec<(String, LearnerSpec)>, master_seed: u64) -> Result<Self> {
        let problems = config.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let agents = agents
            .into_iter()
            .map(|(id, spec)| AgentState::new(id, spec, &config))
            .collect();
        Ok(Market {
            config,
            agents,
            master_seed,
            week_index: 0,
            last_target: None,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn week_index(&self) -> u64 {
        self.week_index
    }

    pub fn last_target(&self) -> Option<f64> {
        self.last_target
    }

    pub fn total_budget(&self) -> f64 {
        self.agents.iter().map(|a| a.budget).sum()
    }

    /// Runs all rounds for one week. `predictions[i]` is agent `i`'s learner
    /// output, `None` when the learner is cold or failed.
    pub fn run_week(&mut self, week: NaiveDate, predictions: &[Option<f64>]) -> Result<WeekTrades> {
        if predictions.len() != self.agents.len() {
            return Err(Error::Numerical(format!(
                "{} predictions for {} agents",
                predictions.len(),
                self.agents.len()
            )));
        }
        let sigma = self.config.payoff_bandwidth;
        let mut remaining: Vec<f64> = self.agents.iter().map(|a| a.budget).collect();
        let mut current: Vec<Option<f64>> = self
            .agents
            .iter()
            .zip(predictions)
            .map(|(a, p)| if a.active { p.filter(|v| v.is_finite()) } else { None })
            .collect();
        let mut rounds: Vec<RoundLedger> = Vec::with_capacity(self.config.rounds.len());
        let mut decisions = Vec::new();
        let mut all_p = Vec::new();
        let mut all_v = Vec::new();

        for (r, bounds) in self.config.rounds.clone().iter().enumerate() {
            let round = r as u8 + 1;
            let interim = rounds.last().map(|l| l.price);
            let mut stakes = Vec::new();
            for i in 0..self.agents.len() {
                let Some(own) = current[i] else { continue };
                let prediction = match interim {
                    None => own,
                    Some(price) => {
                        let agent = &mut self.agents[i];
                        let trend = strategy::budget_trend(
                            &agent.budget_history,
                            self.config.strategy.trend_window,
                            self.config.strategy.flat_band,
                        );
                        let state = QState::new(round, price, own, sigma, trend);
                        resolve_pending(agent, round, state);
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                            self.master_seed,
                            &[i as u64, self.week_index, round as u64],
                        ));
                        let action = strategy::choose_action(state, &agent.q_table, &mut rng);
                        decisions.push(Decision { agent: i, round, state, action });
                        strategy::apply_action(action, own, price)
                    }
                };
                let investment = bounds.max_rpt * remaining[i];
                remaining[i] -= investment;
                current[i] = Some(prediction);
                stakes.push(Stake { agent: i, prediction, investment });
            }
            all_p.extend(stakes.iter().map(|s| s.prediction));
            all_v.extend(stakes.iter().map(|s| s.investment));
            let price = match clear(&all_p, &all_v) {
                Ok(p) => p,
                Err(_) if all_v.iter().all(|v| *v == 0.0) => break,
                Err(e) => return Err(e),
            };
            rounds.push(RoundLedger { round, stakes, price });
        }

        let (market_prediction, fallback) = match rounds.last() {
            Some(l) if rounds.len() == self.config.rounds.len() => (l.price, false),
            _ => {
                rounds.clear();
                decisions.clear();
                (self.last_target.unwrap_or(0.0), true)
            }
        };
        Ok(WeekTrades {
            week,
            rounds,
            decisions,
            market_prediction,
            fallback,
        })
    }

    /// Settles a week against its realized target and updates budgets,
    /// Q-learning state and activity flags.
    pub fn settle_week(&mut self, trades: WeekTrades, target: f64) -> Result<MarketOutcome> {
        let stakes: Vec<Stake> = trades.stakes().copied().collect();
        let settlement = settle(&stakes, target, self.config.payoff_bandwidth)?;
        let floor = self.config.budget_floor * self.config.initial_budget;
        let window = self.config.strategy.trend_window;
        let mut rows = Vec::with_capacity(settlement.payoffs.len());
        let mut deactivated = Vec::new();
        for &(i, stake, payoff) in &settlement.payoffs {
            let agent = &mut self.agents[i];
            agent.budget = (agent.budget - stake + payoff).max(0.0);
            agent.budget_history.push(agent.budget);
            if agent.budget_history.len() > window + 1 {
                let excess = agent.budget_history.len() - (window + 1);
                agent.budget_history.drain(..excess);
            }
            let reward = strategy::reward(payoff, stake);
            for d in trades.decisions.iter().filter(|d| d.agent == i) {
                agent.pending.retain(|p| p.round != d.round);
                agent.pending.push(PendingUpdate {
                    round: d.round,
                    state: d.state,
                    action: d.action,
                    reward,
                });
            }
            if agent.budget < floor {
                agent.active = false;
                deactivated.push(i);
            }
            rows.push(AgentSettlement {
                agent: i,
                stake,
                payoff,
                budget_after: agent.budget,
            });
        }
        for agent in &mut self.agents {
            agent.q_table.decay_epsilon();
        }
        self.week_index += 1;
        self.last_target = Some(target);
        Ok(MarketOutcome {
            week: trades.week,
            rounds: trades.rounds,
            decisions: trades.decisions,
            market_prediction: trades.market_prediction,
            target,
            settlement: rows,
            fallback: trades.fallback,
            refunded: settlement.refunded,
            deactivated,
        })
    }

    pub fn step(&mut self, week: NaiveDate, predictions: &[Option<f64>], target: f64) -> Result<MarketOutcome> {
        let trades = self.run_week(week, predictions)?;
        self.settle_week(trades, target)
    }

    /// Applies outstanding Q-learning backups with no successor state.
    pub fn flush_pending(&mut self) {
        for agent in &mut self.agents {
            for p in std::mem::take(&mut agent.pending) {
                strategy::update(&mut agent.q_table, p.state, p.action, p.reward, None);
            }
        }
    }
}

fn resolve_pending(agent: &mut AgentState, round: u8, next: QState) {
    if let Some(pos) = agent.pending.iter().position(|p| p.round == round) {
        let p = agent.pending.remove(pos);
        strategy::update(&mut agent.q_table, p.state, p.action, p.reward, Some(next));
    }
}

pub(crate) mod qstate_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::strategy::{BudgetTrend, QState};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        round: u8,
        deviation_bin: u8,
        trend: BudgetTrend,
    }

    pub fn serialize<S: Serializer>(s: &QState, ser: S) -> Result<S::Ok, S::Error> {
        Repr {
            round: s.round,
            deviation_bin: s.deviation_bin,
            trend: s.trend,
        }
        .serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<QState, D::Error> {
        let r = Repr::deserialize(de)?;
        Ok(QState {
            round: r.round,
            deviation_bin: r.deviation_bin,
            trend: r.trend,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerKind;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn clear_examples() {
        assert_eq!(clear(&[0.1], &[5.0]).unwrap(), 0.1);
        assert_eq!(clear(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert!(close(clear(&[0.2, 0.5, 0.9], &[1.0, 2.0, 7.0]).unwrap(), 0.75, 1e-15));
        assert!(close(
            clear(&[0.01, 0.02, 0.06], &[10.0, 30.0, 60.0]).unwrap(),
            0.043,
            1e-14
        ));
        assert!(clear(&[0.1, 0.2], &[0.0, 0.0]).is_err());
        assert!(clear(&[0.1], &[-1.0]).is_err());
    }

    #[test]
    fn zero_investment_ignored_for_bounds() {
        let p = clear(&[0.9, 0.1, 0.3], &[0.0, 1.0, 1.0]).unwrap();
        assert!(close(p, 0.2, 1e-15));
    }

    #[test]
    fn settle_single_agent_returns_pot() {
        let s = settle(&[Stake { agent: 0, prediction: 0.3, investment: 9.0 }], 0.01, 0.01).unwrap();
        assert_eq!(s.payoffs, vec![(0, 9.0, 9.0)]);
    }

    #[test]
    fn settle_symmetric_pair() {
        let stakes = [
            Stake { agent: 0, prediction: 0.02, investment: 10.0 },
            Stake { agent: 1, prediction: 0.04, investment: 10.0 },
        ];
        let s = settle(&stakes, 0.03, 0.01).unwrap();
        assert!(close(s.payoffs[0].2, s.payoffs[1].2, 1e-12));
        assert!(close(s.payoffs[0].2, 10.0, 1e-12));
        // Errors that are exactly equal in binary give bit-equal payoffs.
        let stakes = [
            Stake { agent: 0, prediction: 0.25, investment: 10.0 },
            Stake { agent: 1, prediction: 0.75, investment: 10.0 },
        ];
        let s = settle(&stakes, 0.5, 0.25).unwrap();
        assert_eq!(s.payoffs[0].2, s.payoffs[1].2);
        assert_eq!(s.payoffs[0].2, 10.0);
    }

    #[test]
    fn settle_hand_evaluated() {
        // y = 0.03, sigma = 0.01, v = (10, 10), p = (0.03, 0.05):
        // s = (1, e^-2); payoff = 20 * (10, 10 e^-2) / (10 + 10 e^-2).
        let stakes = [
            Stake { agent: 0, prediction: 0.03, investment: 10.0 },
            Stake { agent: 1, prediction: 0.05, investment: 10.0 },
        ];
        let s = settle(&stakes, 0.03, 0.01).unwrap();
        let e2 = (-2.0f64).exp();
        let want0 = 20.0 / (1.0 + e2);
        let want1 = 20.0 * e2 / (1.0 + e2);
        assert!(close(s.payoffs[0].2, want0, 1e-12));
        assert!(close(s.payoffs[1].2, want1, 1e-12));
        assert!((s.payoffs[0].2 - 17.616).abs() < 5e-4);
        assert!((s.payoffs[1].2 - 2.384).abs() < 5e-4);
    }

    #[test]
    fn settle_refunds_on_underflow() {
        let stakes = [
            Stake { agent: 0, prediction: 1.0, investment: 3.0 },
            Stake { agent: 1, prediction: 1.0, investment: 4.0 },
        ];
        let s = settle(&stakes, 0.0, 1e-4).unwrap();
        assert!(s.refunded);
        assert_eq!(s.payoffs, vec![(0, 3.0, 3.0), (1, 4.0, 4.0)]);
    }

    fn agents(n: usize) -> Vec<(String, LearnerSpec)> {
        (0..n)
            .map(|i| (format!("a{i}"), LearnerSpec::new(LearnerKind::Mean)))
            .collect()
    }

    fn week() -> NaiveDate {
        NaiveDate::from_ymd_opt(2004, 1, 4).unwrap()
    }

    #[test]
    fn single_agent_market() {
        let mut m = Market::new(MarketConfig::default(), agents(1), 7).unwrap();
        let out = m.step(week(), &[Some(0.05)], 0.04).unwrap();
        assert_eq!(out.market_prediction, 0.05);
        assert!(close(out.settlement[0].budget_after, 100.0, 1e-15));
    }

    #[test]
    fn two_agents_equal_budget_average() {
        let mut cfg = MarketConfig::default();
        cfg.strategy.epsilon = 0.0;
        let mut m = Market::new(cfg, agents(2), 7).unwrap();
        let trades = m.run_week(week(), &[Some(0.02), Some(0.04)]).unwrap();
        assert!(close(trades.rounds[0].price, 0.03, 1e-15));
        // Greedy on an empty table keeps both predictions, stakes stay equal.
        assert!(close(trades.market_prediction, 0.03, 1e-15));
    }

    #[test]
    fn stake_bounds_follow_remaining_budget() {
        let mut m = Market::new(MarketConfig::default(), agents(1), 1).unwrap();
        let t = m.run_week(week(), &[Some(0.1)]).unwrap();
        assert!(close(t.rounds[0].stakes[0].investment, 90.0, 1e-15));
        assert!(close(t.rounds[1].stakes[0].investment, 0.1, 1e-12));
    }

    #[test]
    fn all_cold_falls_back_to_last_target() {
        let mut m = Market::new(MarketConfig::default(), agents(2), 1).unwrap();
        let out = m.step(week(), &[None, None], 0.02).unwrap();
        assert!(out.fallback);
        assert_eq!(out.market_prediction, 0.0);
        let out = m.step(week() + chrono::Duration::weeks(1), &[None, None], 0.03).unwrap();
        assert!(out.fallback);
        assert_eq!(out.market_prediction, 0.02);
        assert!(out.settlement.is_empty());
        assert_eq!(m.total_budget(), 200.0);
    }

    #[test]
    fn accurate_agent_gains_and_bad_agent_deactivates() {
        let mut cfg = MarketConfig::default();
        cfg.budget_floor = 1e-3;
        let mut m = Market::new(cfg, agents(2), 3).unwrap();
        let mut w = week();
        let mut gone_at = None;
        for k in 0..200 {
            let out = m.step(w, &[Some(0.02), Some(0.08)], 0.02).unwrap();
            let total: f64 = m.total_budget();
            assert!(close(total, 200.0, 1e-9));
            if !out.deactivated.is_empty() {
                gone_at = Some(k);
                break;
            }
            w += chrono::Duration::weeks(1);
        }
        assert!(gone_at.is_some());
        assert!(!m.agents()[1].active);
        let out = m.step(w + chrono::Duration::weeks(1), &[Some(0.02), Some(0.08)], 0.02).unwrap();
        assert!(out.rounds.iter().all(|r| r.stakes.iter().all(|s| s.agent == 0)));
        assert_eq!(out.market_prediction, 0.02);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut m = Market::new(MarketConfig::default(), agents(3), 11).unwrap();
        let mut w = week();
        for k in 0..12 {
            let p = [Some(0.01 + 0.001 * k as f64), Some(0.03), Some(0.02)];
            m.step(w, &p, 0.021).unwrap();
            w += chrono::Duration::weeks(1);
        }
        let json = serde_json::to_string(&m).unwrap();
        let back: Market = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
