use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid mapping parameters: {0}")]
    MappingParams(String),

    #[error("word id {word} out of range for vocabulary of {vocab_size}")]
    WordOutOfRange { word: usize, vocab_size: usize },

    #[error("output layer requires a position-partitioned mapping, got {0}")]
    Unpartitioned(&'static str),

    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("benchmark variants disagree: relative logit difference {0:e}")]
    BenchMismatch(f64),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
