use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: non-finite {field} at epoch {epoch}")]
    NonFinite {
        line: usize,
        epoch: u64,
        field: &'static str,
    },

    #[error("duplicate epoch {0}")]
    DuplicateEpoch(u64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("epoch {0} is not present in the series")]
    EpochNotFound(u64),

    #[error("mixed image dimensions: {first} ({fw}x{fh}) vs {other} ({ow}x{oh})", first = .first.display(), other = .other.display())]
    MixedDimensions {
        first: PathBuf,
        fw: usize,
        fh: usize,
        other: PathBuf,
        ow: usize,
        oh: usize,
    },

    #[error("unsupported image format: {}: {reason}", .path.display())]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("out-of-order epoch {got}: last observed epoch was {last}")]
    OutOfOrder { got: u64, last: u64 },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
