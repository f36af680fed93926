use thiserror::Error;

/// Errors raised by the functional two-sample machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible discretizations: objects live on different grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("insufficient data for {what}: need at least {needed}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("covariance spectrum is identically zero")]
    ZeroSpectrum,

    #[error("number of components L={requested} exceeds the positive rank {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error(
        "leading eigenvalues are not distinct at index {index} \
         (the local power limit assumes lambda_1 > ... > lambda_L > lambda_(L+1) > 0)"
    )]
    NonDistinctEigenvalues { index: usize },

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
