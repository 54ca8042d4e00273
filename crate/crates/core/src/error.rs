//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by instance validation, solvers and the harness.
#[derive(Debug, Error)]
pub enum CmdpError {
    /// Shapes of two inputs do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A problem instance violates one of its structural invariants.
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// A scalar or vector argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A solver configuration is inconsistent or would not terminate.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A numerical routine failed (singular system, NaN iterate, ...).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CmdpError>;
