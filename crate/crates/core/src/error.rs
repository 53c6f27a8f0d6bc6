use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the alignment toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("embedding matrix has no words")]
    EmptyVocabulary,

    #[error("lexicon is empty: {0}")]
    EmptyLexicon(String),

    #[error("k = {k} is out of range (1..={available})")]
    KOutOfRange { k: usize, available: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no retrieval candidates available")]
    EmptyCandidates,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no prediction for source index {0}")]
    MissingPrediction(usize),

    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
