use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. Variants map to the failure classes the
/// operations document: shape mismatches, violated preconditions, bad
/// parameter ranges, file problems, infeasible attack budgets, and numeric
/// divergence during training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("infeasible budget: {0}")]
    Infeasible(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
