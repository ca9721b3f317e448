use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum MilError {
    #[error("empty batch")]
    EmptyBatch,

    #[error("inconsistent feature dimension: expected {expected}, found {found} (bag `{bag_id}`)")]
    InconsistentFeatureDim {
        expected: usize,
        found: usize,
        bag_id: String,
    },

    #[error("inconsistent optional field `{0}`: present in some bags but not all")]
    InconsistentField(&'static str),

    #[error("corrupt batch: {0}")]
    CorruptBatch(String),

    #[error("invalid bag `{bag_id}`: {reason}")]
    InvalidBag { bag_id: String, reason: String },

    #[error("invalid adjacency: {0}")]
    InvalidAdjacency(String),

    #[error("unrecognized array file: {0}")]
    UnrecognizedArrayFile(String),

    #[error("corrupt array file: {0}")]
    CorruptArrayFile(String),

    #[error("field length mismatch: `{field}` has {found} rows but `{reference}` has {expected} (bag `{bag_id}`)")]
    FieldLengthMismatch {
        bag_id: String,
        field: &'static str,
        reference: &'static str,
        found: usize,
        expected: usize,
    },

    #[error("unknown bag id `{0}`")]
    UnknownBag(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("duplicate bag id `{0}`")]
    DuplicateBagId(String),

    #[error("invalid bag id `{0}`: only [A-Za-z0-9_-] allowed")]
    InvalidBagId(String),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("label mismatch for bag `{bag_id}`: manifest says {manifest}, label file says {file}")]
    LabelMismatch {
        bag_id: String,
        manifest: u8,
        file: f32,
    },

    #[error("infeasible witness configuration: {0}")]
    Infeasible(String),

    #[error("empty bag in softmax (row {0})")]
    EmptyBagInSoftmax(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown model `{name}`; supported models: {supported}")]
    UnknownModel { name: String, supported: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model {0} requires bag adjacency, but the batch has none")]
    MissingAdjacency(String),

    #[error("batch has no labels")]
    MissingLabels,

    #[error("divergence detected at epoch {epoch}, step {step} (loss = {loss})")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("AUROC requires both classes")]
    AurocUndefined,

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MilError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MilError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MilError::Divergence { .. })
    }
}

pub type Result<T, E = MilError> = std::result::Result<T, E>;
