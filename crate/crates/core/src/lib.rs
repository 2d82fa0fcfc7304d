//! Daily stock ranking with a return-weighted CNN ensemble.

pub mod analytics;
pub mod backtest;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod indicators;
pub mod losses;
pub mod market_data;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;
