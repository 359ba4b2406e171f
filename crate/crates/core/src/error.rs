use std::fmt;

use thiserror::Error;

/// Which eigenspace a direction was requested from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subspace {
    Null,
    NonNull,
}

impl fmt::Display for Subspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subspace::Null => f.write_str("null"),
            Subspace::NonNull => f.write_str("non-null"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not fit together.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A piecewise activation was evaluated exactly on its breakpoint.
    #[error("input lies on an activation kink (layer {layer}, unit {unit})")]
    OnKink { layer: usize, unit: usize },

    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no {0} directions available at this point")]
    NoDirection(Subspace),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed model, dataset or walk file.
    #[error("format error: {0}")]
    Format(String),

    #[error("layer {layer}: blob `{name}` holds {actual} bytes, expected {expected}")]
    BlobLength {
        layer: usize,
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported file version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Coarse category used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shape(_) | Error::Contract(_) => ErrorKind::Usage,
            Error::OnKink { .. }
            | Error::NonFinite { .. }
            | Error::Numeric(_)
            | Error::NoDirection(_) => ErrorKind::Numeric,
            Error::Unsupported(_) => ErrorKind::Usage,
            Error::Format(_) | Error::BlobLength { .. } | Error::Version { .. } | Error::Io(_) => {
                ErrorKind::Data
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
