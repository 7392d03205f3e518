use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Numeric(#[from] interlace::Error),
}

impl SimError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Validation { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Parse { .. } | SimError::Validation { .. } | SimError::Numeric(_) => 2,
            SimError::Io { .. } | SimError::Csv { .. } => 4,
        }
    }
}

pub type SimResult<T> = std::result::Result<T, SimError>;
