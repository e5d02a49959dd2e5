//! Error types shared across the crate.

use std::path::PathBuf;

/// Errors produced by sampling, embedding, and inference operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The configuration is internally inconsistent or incomplete.
    #[error("config error: {0}")]
    Config(String),

    /// A remote service failed or returned an unusable response.
    #[error("upstream error{}: {message}", status_suffix(.status))]
    Upstream {
        status: Option<u16>,
        message: String,
    },

    /// A remote embedder broke its declared contract (e.g. wrong dimension).
    #[error("embedder contract violation: {0}")]
    EmbedderContract(String),

    /// A cache file contains a line that cannot be parsed.
    #[error("cache corruption in {file} at line {line}: {message}")]
    CacheCorruption {
        file: PathBuf,
        line: usize,
        message: String,
    },

    /// Offline mode is active but the operation needs the network.
    #[error("offline mode: {0}")]
    Offline(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn status_suffix(status: &Option<u16>) -> String {
    match status {
        Some(code) => format!(" (http {code})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Upstream error with an HTTP status attached.
    pub fn upstream(status: u16, message: impl Into<String>) -> Self {
        Error::Upstream {
            status: Some(status),
            message: message.into(),
        }
    }

    /// Upstream error with no HTTP status (transport-level failure).
    pub fn transport(message: impl Into<String>) -> Self {
        Error::Upstream {
            status: None,
            message: message.into(),
        }
    }
}
