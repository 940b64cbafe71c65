use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-binary {field} at row {row}: {value}")]
    NonBinary {
        field: &'static str,
        row: usize,
        value: f64,
    },

    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coefficients sum to {0}")]
    CoefficientSum(String),

    #[error("batch contains a single sensitive group ({0})")]
    SingleGroupBatch(String),

    #[error("converged below measurement floor at checkpoint t={t} (gap {gap})")]
    BelowMeasurementFloor { t: usize, gap: f64 },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}:{line}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: row {row}, column {col}: {message}", path.display())]
    Csv {
        path: PathBuf,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}
