//! A prediction-market ensemble for streaming regression.
//!
//! Online learners trade predictions in artificial markets: each record
//! of a data stream opens a market, agents stake capital on their
//! forecasts across bidding rounds, and settlement against the true value
//! moves capital toward agents that predict well. The stake-weighted
//! market prediction aggregates the ensemble, and trading strategies let
//! agents react to the market consensus.
//!
//! Module map:
//!
//! - [`learner`]: online regression models and feature handling.
//! - [`market`]: the market engine, reward curve, and capital ledger.
//! - [`agent`]: market participants wrapping a learner and a strategy.
//! - [`data`]: CSV ingestion and the synthetic stream generator.
//! - [`harness`]: experiment configuration, execution, and reports.

pub mod agent;
pub mod data;
pub mod harness;
pub mod learner;
pub mod market;

#[cfg(doctest)]
pub mod book;
