//! Term-structure statistics for futures markets.
//!
//! The crate rebuilds constant-maturity price series from raw futures
//! quotes, computes daily log-returns, and studies how return statistics
//! change along the maturity axis: moment term structures, power-law
//! scaling of volatility with maturity, per-maturity tail exponents, and
//! cross-market regime detection. The `synth` module generates data with
//! known ground truth for every estimator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod config;
pub mod curvestats;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod returns;
pub mod rng;
pub mod scaling;
pub mod synth;
pub mod tails;

pub use error::{Error, Result};
