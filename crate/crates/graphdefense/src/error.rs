use std::io;
use std::path::PathBuf;

use graphdefense_core as core;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: invalid configuration: {source}", path.display())]
    ConfigFile {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Integrity { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 for configuration, 2 for data, 3 for numeric
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigFile { .. } => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Integrity { .. }
            | Error::Format { .. } => 2,
            Error::Core(e) => match e {
                core::Error::Config(_)
                | core::Error::EmptyNodeSet(_)
                | core::Error::OverlappingSets(_) => 1,
                core::Error::NodeOutOfRange { .. } | core::Error::InvalidGraph(_) => 2,
                core::Error::Dimension { .. } | core::Error::Singular { .. } => 3,
            },
        }
    }
}
