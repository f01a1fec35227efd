//! Error type shared by all modules of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid configuration or parameter value, detected before any work runs.
    #[error("config error: {0}")]
    Config(String),

    /// An operation received inputs that violate its contract (shape mismatch,
    /// coverage gap, incompatible channel counts).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input contained NaN or infinity where finite values are required.
    #[error("rejected input: {0}")]
    NonFinite(String),

    /// An iterative solver produced a non-finite objective.
    #[error("numeric divergence: {0}")]
    Divergence(String),

    /// A metric is undefined for the given inputs (empty region, zero
    /// denominator, constant image).
    #[error("undefined metric: {0}")]
    Undefined(String),

    /// File I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted artifact is malformed or belongs to a different config.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
