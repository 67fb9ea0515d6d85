use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Numerical(_) => "numerical",
            Error::Sampling(_) => "sampling",
            Error::Input(_) => "input",
            Error::Degenerate(_) => "degenerate",
            Error::Format { .. } => "format",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Protocol(_) => "protocol",
            Error::Io { .. } => "io",
        }
    }
}
