use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the tracker.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}: empty input set")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("template crop contains no points")]
    EmptyTemplate,

    #[error("search region contains no points")]
    EmptySearch,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),

    #[error("{path}: bad format: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error class: 2 for configuration and
    /// arguments, 3 for data and I/O, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Empty(_)
            | Error::EmptyTemplate
            | Error::EmptySearch
            | Error::Format { .. }
            | Error::Parse { .. }
            | Error::Io { .. } => 3,
            Error::NonFinite(_) | Error::Shape { .. } => 4,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
