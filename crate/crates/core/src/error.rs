use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("cycle detected in ontology: {}", path.join(" -> "))]
    Cycle { path: Vec<String> },

    #[error("unknown concept code `{0}`")]
    UnknownCode(String),

    #[error("duplicate concept code `{0}`")]
    DuplicateCode(String),

    #[error("`{0}` is not a PT-level concept")]
    NotPreferredTerm(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Cycle { .. } => "cycle",
            Error::UnknownCode(_) => "unknown_code",
            Error::DuplicateCode(_) => "duplicate_code",
            Error::NotPreferredTerm(_) => "not_preferred_term",
            Error::Validation(_) => "validation",
            Error::Numerical(_) => "numerical",
        }
    }
}
