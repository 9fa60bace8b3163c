use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = IccError> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum IccError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("non-positive price {price} for `{ticker}` on {date}")]
    NonPositivePrice {
        date: NaiveDate,
        ticker: String,
        price: f64,
    },
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance of clique {0:?} is singular")]
    SingularClique(Vec<usize>),
    #[error("sample covariance is singular at lambda = 0; use a positive penalty")]
    SingularCovariance,
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),
    #[error("cluster {cluster} stayed empty after {attempts} re-seeds")]
    EmptyCluster { cluster: usize, attempts: usize },
    #[error("logistic regression needs both classes, found only class {0}")]
    OneClass(u8),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IccError {
    pub fn kind(&self) -> ErrorKind {
        use IccError::*;
        match self {
            Config(_) => ErrorKind::Config,
            Data(_) | NonPositivePrice { .. } | ZeroVariance(_) | DimensionMismatch { .. } | OneClass(_) => {
                ErrorKind::Data
            }
            Io(_) | Csv(_) | Json(_) => ErrorKind::Data,
            SingularClique(_) | SingularCovariance | NotPositiveDefinite(_) | EmptyCluster { .. } | Numerical(_) => {
                ErrorKind::Numerical
            }
        }
    }
}
