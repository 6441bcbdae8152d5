//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("time ordering violated: expected s < t, got s = {s}, t = {t}")]
    Ordering { s: f64, t: f64 },

    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit status used by the command-line harness.
    ///
    /// 2 for configuration and usage problems, 3 for I/O and file-format
    /// problems, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::InvalidParameter(_)
            | Error::Domain(_)
            | Error::Ordering { .. }
            | Error::Capability(_)
            | Error::Shape(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::NumericInput(_) | Error::Numeric(_) => 4,
        }
    }
}
