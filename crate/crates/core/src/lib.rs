//! Covariate-adaptive randomization for two-arm trials.
//!
//! The crate covers the randomization procedures (complete, Efron, Wei,
//! stratified permuted blocks, Pocock–Simon, Hu–Hu and a γ-indexed family of
//! allocation functions), the loss of power of the treatment t-test caused by
//! imbalance, selection bias under guessing strategies, a Monte Carlo engine
//! and exact small-instance oracles.

pub mod allocation;
pub mod config;
pub mod covariate;
pub mod error;
pub mod imbalance;
pub mod inference;
pub mod oracle;
pub mod procedures;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod selection_bias;
pub mod simulator;
pub mod special;

pub use error::{Error, Result};
