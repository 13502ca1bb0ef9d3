use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("source and target extents do not overlap")]
    EmptyOverlap,

    #[error("expected {expected} entries, got {found}: {what}")]
    Arity {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("role not found in stack: {0}")]
    RoleNotFound(String),

    #[error("band not found in stack: {0}")]
    BandNotFound(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("pixel ({row}, {col}) is not covered by any patch")]
    Coverage { row: usize, col: usize },

    #[error("cannot split: {0}")]
    Split(String),

    #[error("loss is undefined: every pixel is ignored")]
    EmptyLoss,

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("band registry mismatch: {0}")]
    Registry(String),

    #[error("permutation impossible: {0}")]
    Permutation(String),

    #[error("json error: {0}")]
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
