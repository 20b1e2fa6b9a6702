use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum CrlError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-binary value {value} in {context}")]
    NonBinary { context: &'static str, value: f64 },

    #[error("log-sum {0} is positive; a product of factors in (0, 1] has a nonpositive log")]
    PositiveLogSum(f64),

    #[error("forward cache does not match this layer or gradient: {0}")]
    StaleCache(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, step {step}; last finite model retained")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        last_good: Box<crate::model::CrlModel>,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("csv row {row}: missing column {column}")]
    MissingColumn { row: usize, column: String },

    #[error("csv header: {0}")]
    BadHeader(String),

    #[error("csv row {row}: concept {column} has non-binary value {value:?}")]
    NonBinaryConcept {
        row: usize,
        column: String,
        value: String,
    },

    #[error("csv row {row}: label {value:?} is out of range (classes: {classes})")]
    LabelOutOfRange {
        row: usize,
        value: String,
        classes: usize,
    },

    #[error("csv row {row}: column {column} has unparseable value {value:?}")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("rule set fingerprint {rules} does not match model fingerprint {model}")]
    FingerprintMismatch { rules: String, model: String },

    #[error("unsupported {kind} version {found:?} (expected {expected:?})")]
    UnsupportedVersion {
        kind: &'static str,
        found: String,
        expected: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CrlError> = std::result::Result<T, E>;

impl CrlError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CrlError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(CrlError::DimensionMismatch {
                context,
                expected,
                actual,
            })
        }
    }
}
