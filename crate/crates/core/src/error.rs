use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file ({skipped} of {total} data lines invalid)")]
    Malformed {
        path: PathBuf,
        skipped: usize,
        total: usize,
    },

    #[error("segment store: {0}")]
    Store(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("non-finite loss component `{component}` (value {value})")]
    NonFinite { component: &'static str, value: f64 },

    #[error(transparent)]
    Autodiff(#[from] stproc_autodiff::AutodiffError),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
