use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field increment requested at undeclared point {point:?} (step {step})")]
    MissingPoint { step: usize, point: Vec<f64> },

    #[error("covariance factorization failed at step {step} (condition estimate {condition:.3e})")]
    NumericalDegeneracy { step: usize, condition: f64 },

    #[error("non-finite value at step {step}, path {path}")]
    Divergence { step: usize, path: usize },

    #[error("rank-deficient regression design at step {step}")]
    BasisDegeneracy { step: usize },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
