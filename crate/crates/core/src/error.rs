use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DipError>;

#[derive(Debug, Error)]
pub enum DipError {
    #[error("matrix is not a rotation (orthonormality error {0:.3e})")]
    NotRotation(f64),

    #[error("degenerate hip direction in first frame (|n| = {0:.3e})")]
    DegenerateHips(f64),

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("shape mismatch: {what} expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("asset error on line {line}: {msg}")]
    Asset { line: usize, msg: String },

    #[error("no basis for action {0}")]
    MissingBasis(String),

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("sub-task {index} failed: {source}")]
    SubTask {
        index: usize,
        #[source]
        source: Box<DipError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DipError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DipError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            DipError::Validation(_)
            | DipError::Parse { .. }
            | DipError::Truncated { .. }
            | DipError::Asset { .. }
            | DipError::InvalidSchedule(_)
            | DipError::Json(_)
            | DipError::Shape { .. } => true,
            DipError::SubTask { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
