//! JSON-lines market ledger: one object per settled week, keys in a fixed
//! order, reals rounded to 12 significant digits.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::frame::DATE_FORMAT;
use crate::market::MarketOutcome;
use crate::strategy::{Action, BudgetTrend};

/// Rounds to 12 significant digits; the shortest representation of the
/// rounded value is what ends up in the file.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn ser12<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round12(*x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StakeRecord {
    pub agent: String,
    #[serde(serialize_with = "ser12")]
    pub prediction: f64,
    #[serde(serialize_with = "ser12")]
    pub investment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    pub round: u8,
    #[serde(serialize_with = "ser12")]
    pub price: f64,
    pub stakes: Vec<StakeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub agent: String,
    pub round: u8,
    pub deviation_bin: u8,
    pub trend: BudgetTrend,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettlementRecord {
    pub agent: String,
    #[serde(serialize_with = "ser12")]
    pub stake: f64,
    #[serde(serialize_with = "ser12")]
    pub payoff: f64,
    #[serde(serialize_with = "ser12")]
    pub budget_after: f64,
}

/// One ledger line. Field order here is the key order on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRecord {
    pub week: String,
    pub rounds: Vec<RoundRecord>,
    pub decisions: Vec<DecisionRecord>,
    #[serde(serialize_with = "ser12")]
    pub market_prediction: f64,
    #[serde(serialize_with = "ser12")]
    pub target: f64,
    pub settlement: Vec<SettlementRecord>,
    pub fallback: bool,
    pub refunded: bool,
    pub deactivated: Vec<String>,
}

impl LedgerRecord {
    /// `ids[i]` names agent `i`.
    pub fn from_outcome(o: &MarketOutcome, ids: &[String]) -> Self {
        let id = |i: usize| ids[i].clone();
        LedgerRecord {
            week: o.week.format(DATE_FORMAT).to_string(),
            rounds: o
                .rounds
                .iter()
                .map(|r| RoundRecord {
                    round: r.round,
                    price: r.price,
                    stakes: r
                        .stakes
                        .iter()
                        .map(|s| StakeRecord {
                            agent: id(s.agent),
                            prediction: s.prediction,
                            investment: s.investment,
                        })
                        .collect(),
                })
                .collect(),
            decisions: o
                .decisions
                .iter()
                .map(|d| DecisionRecord {
                    agent: id(d.agent),
                    round: d.round,
                    deviation_bin: d.state.deviation_bin,
                    trend: d.state.trend,
                    action: d.action,
                })
                .collect(),
            market_prediction: o.market_prediction,
            target: o.target,
            settlement: o
                .settlement
                .iter()
                .map(|s| SettlementRecord {
                    agent: id(s.agent),
                    stake: s.stake,
                    payoff: s.payoff,
                    budget_after: s.budget_after,
                })
                .collect(),
            fallback: o.fallback,
            refunded: o.refunded,
            deactivated: o.deactivated.iter().map(|&i| id(i)).collect(),
        }
    }
}

pub fn write_record<W: Write>(w: &mut W, record: &LedgerRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

pub fn read_ledger<R: BufRead>(r: R, context: &str) -> Result<Vec<LedgerRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: context.to_string(),
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{LearnerKind, LearnerSpec};
    use crate::market::{Market, MarketConfig};
    use chrono::NaiveDate;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round12(0.1 + 0.2), 0.3);
        assert_eq!(round12(1.0 / 3.0), 0.333333333333);
        assert_eq!(round12(123456789.0123456), 123456789.012);
        assert_eq!(round12(0.0), 0.0);
        assert_eq!(round12(2.5e-300), 2.5e-300);
    }

    fn outcome() -> (MarketOutcome, Vec<String>) {
        let ids = vec!["a".to_string(), "b".to_string()];
        let spec = LearnerSpec::new(LearnerKind::Passthrough).with_features(&["x"]);
        let mut m = Market::new(
            MarketConfig::default(),
            ids.iter().map(|i| (i.clone(), spec.clone())).collect(),
            3,
        )
        .unwrap();
        let week = NaiveDate::from_ymd_opt(2010, 1, 3).unwrap();
        (m.step(week, &[Some(0.02), Some(1.0 / 30.0)], 0.03).unwrap(), ids)
    }

    #[test]
    fn key_order_and_round_trip() {
        let (o, ids) = outcome();
        let rec = LedgerRecord::from_outcome(&o, &ids);
        let mut buf = Vec::new();
        write_record(&mut buf, &rec).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        let keys = [
            "\"week\"",
            "\"rounds\"",
            "\"decisions\"",
            "\"market_prediction\"",
            "\"target\"",
            "\"settlement\"",
            "\"fallback\"",
            "\"refunded\"",
            "\"deactivated\"",
        ];
        let pos: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert!(line.contains("0.0333333333333"));
        assert!(!line.contains("0.03333333333333"));

        let back = read_ledger(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].week, "2010-01-03");
        assert_eq!(back[0].rounds.len(), 2);
        assert_eq!(back[0].market_prediction, round12(rec.market_prediction));
        // A re-serialized read-back is byte-identical.
        let mut again = Vec::new();
        write_record(&mut again, &back[0]).unwrap();
        assert_eq!(again, buf);
    }
}
