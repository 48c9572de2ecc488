use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("need at least {needed} observations, found {found}")]
    TooFewObservations { needed: usize, found: usize },

    /// Sample too small for the estimator (requires n > p + 1).
    #[error("insufficient sample: p = {p}, n = {n} (need n > p + 1)")]
    InsufficientSample { p: usize, n: usize },

    #[error("covariance matrix is singular or not positive definite (p = {p}, n = {n:?})")]
    Singular { p: usize, n: Option<usize> },

    #[error("{name} = {value} is out of range: {expected}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("weights sum to {sum}, expected 1")]
    NotFullyInvested { sum: f64 },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Ingestion failure with 1-based row/column coordinates of the offending cell.
    #[error("data error at row {row}, column {col}: {message}")]
    Data {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn out_of_range(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::OutOfRange {
            name,
            value,
            expected,
        }
    }

    /// True for failures caused by the numbers themselves (singular systems,
    /// degenerate ratios) rather than by configuration or input shape.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::Degenerate(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
