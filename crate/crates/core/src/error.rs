use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("gold triplets not covered by pair policy {policy}: {triplets}")]
    PolicyMismatch { policy: String, triplets: String },

    #[error("invalid configuration keys: {}", .keys.join(", "))]
    Config { keys: Vec<String> },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("archive version {found} is not supported (expected {expected})")]
    ArchiveVersion { found: String, expected: u32 },

    #[error("malformed archive: {0}")]
    Archive(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
