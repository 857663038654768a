use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("parameter `{name}` became non-finite after the update")]
    NonFiniteParam { name: String },

    #[error("batch norm `{layer}` evaluated before running statistics were initialized")]
    UninitializedStats { layer: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {detail}")]
    Manifest { path: PathBuf, line: usize, detail: String },

    #[error("BIT container {path}: bad magic bytes")]
    BadMagic { path: PathBuf },

    #[error("BIT container {path}: truncated payload (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("BIT container {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite { .. } | Error::NonFiniteParam { .. } | Error::Diverged { .. } => ErrorKind::Numerical,
            Error::Config(_) => ErrorKind::Config,
            Error::Shape { .. } | Error::InvalidArgument { .. } | Error::UninitializedStats { .. } => ErrorKind::Config,
            Error::Manifest { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::Format { .. }
            | Error::Data(_)
            | Error::Io { .. } => ErrorKind::Data,
        }
    }
}
