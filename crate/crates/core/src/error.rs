use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mode index {index} for {family} family")]
    InvalidIndex { family: &'static str, index: String },

    #[error("point {point:?} lies outside the domain of the {family} family")]
    OutsideDomain { family: &'static str, point: Vec<f64> },

    #[error("series cannot be truncated: {0}")]
    Truncation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("space grids differ")]
    GridMismatch,

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("snapshot matrix is identically zero")]
    ZeroMatrix,

    #[error("field has zero norm")]
    ZeroField,

    #[error("averaging window exceeds the sampled time span: {0}")]
    WindowOutOfRange(String),

    #[error("sensor design matrix has rank {rank} < {required}")]
    SingularFit { rank: usize, required: usize },

    #[error("exponent collision at positions {0} and {1}")]
    Collision(usize, usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = configuration or argument error, 3 = numerical failure, 4 = I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidIndex { .. }
            | Error::OutsideDomain { .. }
            | Error::InvalidArgument(_)
            | Error::GridMismatch
            | Error::DimensionMismatch(..)
            | Error::WindowOutOfRange(_)
            | Error::InsufficientData(_)
            | Error::Config(_) => 2,
            Error::Truncation(_)
            | Error::ZeroMatrix
            | Error::ZeroField
            | Error::SingularFit { .. }
            | Error::Collision(..)
            | Error::Numerical(_) => 3,
            Error::ShapeMismatch { .. } | Error::Malformed { .. } | Error::Io { .. } => 4,
        }
    }
}
