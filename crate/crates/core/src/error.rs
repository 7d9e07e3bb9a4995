use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("not a flo file (magic {magic})")]
    NotFlo { magic: f32 },

    #[error("size mismatch: expected {expected} payload bytes, found {actual}")]
    FloSizeMismatch { expected: usize, actual: usize },

    #[error("invalid flow: {0}")]
    InvalidFlow(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {detail}")]
    File { path: PathBuf, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Error::File {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}
