use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum TentError {
    #[error("format error in {path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("node {node} out of bounds (node_count = {node_count})")]
    Bounds { node: usize, node_count: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("episode infeasible: {0}")]
    Infeasible(String),
    #[error("training aborted at epoch {epoch}: {source}")]
    Aborted {
        epoch: usize,
        #[source]
        source: Box<TentError>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TentError {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            TentError::Format { .. } => "format",
            TentError::Integrity(_) => "integrity",
            TentError::Bounds { .. } => "bounds",
            TentError::Argument(_) => "argument",
            TentError::Shape(_) => "shape",
            TentError::Numeric(_) => "numeric",
            TentError::Schema(_) => "schema",
            TentError::Infeasible(_) => "infeasible",
            TentError::Aborted { .. } => "aborted",
            TentError::Io { .. } => "io",
            TentError::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TentError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TentError>;
