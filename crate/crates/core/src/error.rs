use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Validation and I/O problems are distinguished from numerical failures so
/// the command-line front end can map them onto different exit codes.
#[derive(Debug, Error)]
pub enum LcapError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate projection: gamma has zero norm")]
    DegenerateProjection,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl LcapError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LcapError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        LcapError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Prefixes the message of an `Invalid` error with `field.`, so that
    /// `"p: must be >= 1"` becomes `"sim.p: must be >= 1"`.
    pub fn in_field(self, field: &str) -> Self {
        match self {
            LcapError::Invalid(msg) => LcapError::Invalid(format!("{field}.{msg}")),
            other => other,
        }
    }

    /// Prefixes the message of an `Invalid` error with the configuration
    /// file it came from.
    pub fn in_config(self, path: &std::path::Path) -> Self {
        match self {
            LcapError::Invalid(msg) => LcapError::Invalid(format!("{}: {msg}", path.display())),
            other => other,
        }
    }

    /// True for failures caused by the input data rather than the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            LcapError::Parse { .. }
                | LcapError::Io { .. }
                | LcapError::Invalid(_)
                | LcapError::Precondition(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, LcapError>;
