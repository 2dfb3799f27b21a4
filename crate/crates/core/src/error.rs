//! Error type shared across the library.

use std::fmt;

/// Errors produced by model construction, training, and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// An argument violated a documented precondition (shape mismatch,
    /// empty batch, out-of-range label, ...).
    ContractViolation(String),
    /// A matrix could not be Cholesky-factorized even at the maximum
    /// jitter level.
    NotPositiveDefinite { size: usize, max_jitter: f64 },
    /// A non-finite value appeared during a numeric computation.
    NumericFailure(String),
    /// No trial of a hyperparameter search finished with a finite objective.
    NoSuccessfulTrials,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ContractViolation(msg) => write!(f, "contract violation: {msg}"),
            CoreError::NotPositiveDefinite { size, max_jitter } => write!(
                f,
                "matrix ({size}x{size}) not positive definite after jitter up to {max_jitter:e}"
            ),
            CoreError::NumericFailure(msg) => write!(f, "numeric failure: {msg}"),
            CoreError::NoSuccessfulTrials => write!(f, "no successful trials"),
        }
    }
}

impl std::error::Error for CoreError {}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn contract(msg: impl Into<String>) -> CoreError {
    CoreError::ContractViolation(msg.into())
}
