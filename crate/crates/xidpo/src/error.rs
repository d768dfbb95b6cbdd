//! Crate-wide error type.
//!
//! Variants map one-to-one onto the CLI's exit-code classes: usage,
//! validation/contract, I/O, and check failure.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad command-line input detected after argument parsing.
    #[error("usage error: {0}")]
    Usage(String),

    /// An operation was called outside its contract (empty response,
    /// token id out of range, parameter out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data failed validation against its invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// A configuration document or method/hyperparameter combination is
    /// invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Both length-normalized log-probabilities are zero: the ratio-margin
    /// denominator vanishes and the pair carries no usable signal.
    #[error("degenerate pair: {0}")]
    DegeneratePair(String),

    /// Quantile-based xi selection produced a value outside (0, 1].
    #[error("invalid xi: {0}")]
    InvalidXi(String),

    /// A gap distribution ended up with no usable samples.
    #[error("empty distribution: {0}")]
    EmptyDistribution(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A verification command (grad-check, equiv-check) exceeded its
    /// tolerance.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegeneratePair(msg.into())
    }
}
