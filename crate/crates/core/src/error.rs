use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the reconstruction pipeline and its I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("malformed {kind} at {path}: {reason}")]
    Malformed {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("point coincides with a camera center")]
    DegenerateGeometry,

    #[error("no photoconsistent support")]
    NoPhotoconsistentSupport,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss {loss} at lambda {lambda}")]
    NonFiniteLoss { lambda: f64, loss: f64 },

    #[error("unknown view {0}")]
    UnknownView(usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code for this error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::Malformed { .. } => "MALFORMED_INPUT",
            Error::DegenerateGeometry => "DEGENERATE_GEOMETRY",
            Error::NoPhotoconsistentSupport => "NO_SUPPORT",
            Error::Empty(_) => "EMPTY_INPUT",
            Error::NonFiniteLoss { .. } => "NON_FINITE_LOSS",
            Error::UnknownView(_) => "UNKNOWN_VIEW",
            Error::Io { .. } => "IO_ERROR",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
