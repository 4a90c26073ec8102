use thiserror::Error;

/// Errors surfaced by the estimation library.
#[derive(Debug, Error)]
pub enum SaseError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("infeasible sounder: {0}")]
    Infeasible(String),
    #[error("estimation failure: {0}")]
    EstimationFailure(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("linear algebra backend: {0}")]
    Backend(#[from] ndarray_linalg::error::LinalgError),
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl SaseError {
    /// True for errors caused by bad inputs/configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            SaseError::InvalidDimension(_)
                | SaseError::InvalidParameter(_)
                | SaseError::ShapeMismatch(_)
                | SaseError::Infeasible(_)
                | SaseError::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SaseError>;
