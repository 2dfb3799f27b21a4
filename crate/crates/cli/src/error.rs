//! Harness error type, mapped onto process exit codes.

use std::fmt;
use uqbench_core::CoreError;

/// Errors from the benchmark harness. Each category carries the exit code
/// the binary reports: 2 for configuration, 3 for ingestion, 4 for
/// numeric failures.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Invalid flags, config files, preset names, or model contracts.
    Config(String),
    /// Dataset files that cannot be read or fail validation.
    Ingestion(String),
    /// Training or evaluation failed numerically.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Ingestion(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Ingestion(msg) => write!(f, "ingestion error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Contract violations surface as config errors; everything else the core
/// reports is a numeric failure.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::ContractViolation(msg) => CliError::Config(msg),
            CoreError::NumericFailure(msg) => CliError::Numeric(msg),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub(crate) fn ingestion(msg: impl Into<String>) -> CliError {
    CliError::Ingestion(msg.into())
}
