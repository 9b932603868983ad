use std::path::PathBuf;

use thiserror::Error;

/// Broad error classes. The CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or unmet preconditions.
    Argument,
    /// Missing files, malformed bundles, invalid datasets.
    Data,
    /// Solver or optimizer breakdown.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: expected {expected} bytes, found {actual}")]
    ByteLength {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("coupling mass {0} deviates from 1 by more than 1e-6")]
    CouplingIntegrity(f64),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("fit error: {0}")]
    Fit(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::MissingFile(_)
            | Error::ByteLength { .. }
            | Error::Format(_)
            | Error::Parse { .. }
            | Error::Validation(_) => ErrorKind::Data,
            Error::Argument(_) | Error::Unsupported(_) | Error::Fit(_) => ErrorKind::Argument,
            Error::CouplingIntegrity(_) | Error::Numerical(_) => ErrorKind::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
