use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fusion pipeline.
///
/// Variants are grouped so the CLI can map them to process exit codes:
/// validation-like failures, synchronization failures, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient tap events: {camera} camera, {sensor} sensor (need at least 2 each)")]
    InsufficientEvents { camera: usize, sensor: usize },

    #[error("synchronization failed: {0}")]
    SyncFailed(String),

    #[error("session is not synchronized; run `sync --session {0}` first")]
    NotSynced(PathBuf),

    #[error("unpaired frames (no exact timestamp match): {0:?}")]
    Pairing(Vec<f64>),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 validation, 3 sync failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InsufficientEvents { .. } | Error::SyncFailed(_) | Error::NotSynced(_) => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
