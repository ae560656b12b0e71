use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or missing configuration, detected before any work starts.
    #[error("config error: {0}")]
    Config(String),

    /// Corpus or gold data that violates the annotation model.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed line in a column-format corpus file.
    #[error("{path}:{line}: {msg}")]
    Conll {
        path: String,
        line: usize,
        msg: String,
    },

    /// Failure talking to a chat or embedding provider.
    #[error("backend error: {0}")]
    Backend(String),

    #[error("replay cache miss for request {0}")]
    ReplayMiss(String),

    #[error("scripted backend: queue exhausted")]
    QueueExhausted,

    #[error("embedding cache corrupted: {0}")]
    CacheCorrupt(String),

    #[error("missing token vector for {0:?}")]
    MissingVector(String),

    #[error("model output could not be parsed")]
    Parse(#[from] crate::prompt::ParseFailure),

    #[error("io error on {path}: {source}")]
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

    /// Process exit code for the command-line driver: 1 config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_)
            | Error::Conll { .. }
            | Error::Parse(_)
            | Error::Json(_)
            | Error::MissingVector(_)
            | Error::Io { .. } => 2,
            Error::Backend(_)
            | Error::ReplayMiss(_)
            | Error::QueueExhausted
            | Error::CacheCorrupt(_) => 3,
        }
    }
}
