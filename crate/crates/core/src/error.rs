use thiserror::Error;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum WfrError {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A hard marginal constraint cannot be met by any transport plan.
    #[error("infeasible marginal: {0}")]
    InfeasibleMarginal(String),

    /// Input outside the validity window of a special-function evaluation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed on-disk data (CSV density files, PGM masks).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WfrError>;
