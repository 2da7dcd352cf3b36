use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite values in parameter block `{block}` ({count} entries)")]
    NonFinite { block: String, count: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate normalization range: alpha * au_max ({scaled_max}) <= au_min ({au_min})")]
    DegenerateRange { scaled_max: f64, au_min: f64 },
    #[error("degenerate geometry: {0}")]
    Geometry(String),
    #[error("manifest integrity: missing files {0:?}")]
    Integrity(Vec<PathBuf>),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("mask label {label} outside 0..={max}")]
    Label { label: usize, max: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dimension(
        context: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
