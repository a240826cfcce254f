use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the analysis routines and file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{message}")]
    Validation {
        message: String,
        /// Offending hypothesis id, when one can be named.
        id: Option<String>,
        line: Option<u64>,
    },

    #[error("unknown hypothesis id {0}")]
    UnknownId(String),

    #[error("selection is empty")]
    EmptySelection,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("lattice needs 2^{n} intersections; the limit is n <= {cap}, use the full-set bound instead")]
    CapExceeded { n: usize, cap: usize },
}

impl Error {
    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation {
            message: message.into(),
            id: None,
            line: None,
        }
    }

    pub(crate) fn for_id(id: &str, line: Option<u64>, message: impl Into<String>) -> Self {
        Error::Validation {
            message: message.into(),
            id: Some(id.to_owned()),
            line,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
