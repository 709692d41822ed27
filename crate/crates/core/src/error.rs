use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation and detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition or invariant.
    #[error("invalid {what}: {reason}")]
    Validation { what: String, reason: String },

    /// No trace in an ensemble reached the critical threshold.
    #[error("no trace reached criticality ({excluded} runs excluded)")]
    EmptyAlignment { excluded: usize },

    /// A configuration file could not be read or failed validation.
    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    /// A row in an ingested CSV file was malformed.
    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
