use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the decomposition engine and its IO layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank {rank} exceeds mode size {size} ({mode}); reduce the rank")]
    RankTooLarge {
        mode: &'static str,
        rank: usize,
        size: usize,
    },

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("reaction-diffusion integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name used for CLI exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) | Error::RankTooLarge { .. } | Error::InvalidInput(_) => "input",
            Error::Initialization(_) | Error::Divergence { .. } => "model",
            Error::Parse { .. } => "parse",
            Error::Evaluation(_) => "evaluation",
            Error::Io { .. } | Error::Serialization(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
