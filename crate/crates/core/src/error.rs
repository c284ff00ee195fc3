use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("point ({x}, {y}) lies outside the domain {domain}")]
    OutOfDomain { x: f64, y: f64, domain: String },

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("duplicate design point ({x}, {y})")]
    DuplicatePoint { x: f64, y: f64 },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("sampling jitter exhausted at {jitter:e} (relative to sigma^2)")]
    JitterExhausted { jitter: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::Factorization(_)
                | Error::JitterExhausted { .. }
                | Error::NonFinite(_)
        )
    }
}
