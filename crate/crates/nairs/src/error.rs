use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
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
    #[error("{0}: dataset is empty")]
    EmptyDataset(PathBuf),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("config: {0}")]
    Config(String),
    #[error("training: {0}")]
    Training(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] nairs_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::Snapshot(_) => "snapshot",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Config(_) => "config",
            Error::Training(_) => "training",
            Error::Usage(_) => "usage",
            Error::Core(_) => "model",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
