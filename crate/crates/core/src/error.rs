use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Contract,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {}: {reason}", .path.display())]
    Header { path: PathBuf, reason: String },

    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("non-finite value at voxel {index}")]
    NonFinite { index: usize },

    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),

    #[error("unsupported dimensionality: {0}")]
    UnsupportedDimensionality(String),

    #[error("compressed input is not supported: {}", .0.display())]
    Compressed(PathBuf),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad configuration {}: {reason}", .path.display())]
    Config { path: PathBuf, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("inconsistent metadata: {0}")]
    Metadata(String),

    #[error("csv error in {}: {source}", .path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Header {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MissingFile(_) | Error::Io { .. } => ErrorKind::Io,
            Error::InvalidArgument(_) | Error::Config { .. } => ErrorKind::Config,
            Error::Header { .. }
            | Error::SizeMismatch { .. }
            | Error::NonFinite { .. }
            | Error::UnsupportedDtype(_)
            | Error::UnsupportedDimensionality(_)
            | Error::Compressed(_)
            | Error::InvalidVolume(_)
            | Error::ShapeMismatch(_)
            | Error::Contract(_)
            | Error::Metadata(_)
            | Error::Csv { .. }
            | Error::Json { .. } => ErrorKind::Contract,
        }
    }
}
