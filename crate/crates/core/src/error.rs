//! Error type shared across the toolkit.

use std::path::PathBuf;
use thiserror::Error;

/// Unified error for every fallible operation in the library.
///
/// The three variants map onto the CLI exit codes: `Config` -> 2,
/// `Data` -> 3, `Numeric` -> 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value, argument out of range, unknown key.
    #[error("{0}")]
    Config(String),
    /// Malformed or missing input data: manifests, images, model files.
    #[error("{0}")]
    Data(String),
    /// Numerical failure: non-finite loss, non-PSD covariance, etc.
    #[error("{0}")]
    Numeric(String),
    /// Filesystem failure while touching `path`.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-parseable code prefix used by the CLI (`E_CONFIG: ...`).
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "E_CONFIG",
            Error::Data(_) | Error::Io { .. } => "E_DATA",
            Error::Numeric(_) => "E_NUMERIC",
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
