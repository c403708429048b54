use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CpicError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CpicError {
    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },

    #[error("{0}: input is empty")]
    Empty(&'static str),

    #[error("matrix not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite gradient in parameter `{param}` at step {step}")]
    NonFiniteGradient { param: String, step: u64 },

    #[error("non-finite value at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("failed to access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: non-numeric cell at row {row}, column {col}: {cell:?}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        cell: String,
    },

    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("anchor {anchor} out of range: valid anchors are {min}..={max}")]
    AnchorOutOfRange {
        anchor: usize,
        min: usize,
        max: usize,
    },

    #[error("series too short: need at least {required} time steps, have {available}")]
    TooShort { required: usize, available: usize },

    #[error("insufficient data: need at least {required} samples, have {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl CpicError {
    pub(crate) fn shape(
        what: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        CpicError::Shape {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
