//! Preference-optimization laboratory.
//!
//! Implements the xi-DPO ratio-margin objective and a catalog of
//! preference-optimization baselines (DPO, IPO, SimPO, CPO, ORPO, R-DPO,
//! SimPER) over a tiny bigram softmax policy with exact log-probabilities
//! and analytic gradients. Includes reward-gap distribution analysis,
//! quantile-based xi selection, beta/gamma diagnostics, a deterministic
//! trainer, and synthetic preference-data generation.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod margin;
pub mod policy;
pub mod rewards;
pub mod threads;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
