//! Continuous artificial prediction market (c-APM) for weekly influenza-like
//! illness nowcasting, with ingestion, learners, a Q-learning trading
//! strategy, a backtest driver, evaluation statistics and synthetic oracles.

pub mod config;
pub mod error;
pub mod backtest;
pub mod cli;
pub mod eval;
pub mod frame;
pub mod ingest;
pub mod learners;
pub mod ledger;
pub mod market;
pub mod seed;
pub mod stats;
pub mod strategy;
pub mod synth;

pub use error::{Error, Result};
pub use frame::{Column, TimeSeriesFrame};
