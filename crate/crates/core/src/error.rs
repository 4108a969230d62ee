use std::io;
use std::path::Path;

use crate::gateway::GatewayError;
use crate::prompts::{CriterionError, ParseFailure};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("zero images found under {0}")]
    ZeroImages(String),

    #[error("duplicate image_id {image_id} (line {line})")]
    DuplicateImageId { image_id: String, line: usize },

    #[error("truth_label {label:?} on line {line} is not one of the manifest class_names")]
    UnknownClass { label: String, line: usize },

    #[error("cannot sample {requested} records from a manifest of {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Criterion(#[from] CriterionError),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error(transparent)]
    ClusterParse(#[from] ParseFailure),

    #[error("cluster list did not contain exactly {k} names after {attempts} attempts")]
    KEnforcementFailed {
        k: usize,
        attempts: usize,
        responses: Vec<String>,
    },

    #[error("dictionary is empty after applying threshold {threshold}; lower the threshold")]
    EmptyDictionary { threshold: u64 },

    #[error("{stage} aborted: {failed} of {total} items failed (first: {}): {first_error}", first_failed.join(", "))]
    StageAborted {
        stage: String,
        failed: usize,
        total: usize,
        first_failed: Vec<String>,
        first_error: String,
    },

    #[error("run {run_id}: configuration digest changed ({expected} -> {found}); use refine to derive a new run")]
    ConfigMismatch {
        run_id: String,
        expected: String,
        found: String,
    },

    #[error("run {0} not found")]
    RunNotFound(String),

    #[error("run {0} already exists")]
    RunExists(String),

    #[error("parent run {0} has not completed")]
    ParentIncomplete(String),

    #[error("run store {0} already has the maximum number of active runs")]
    StoreBusy(String),

    #[error("length mismatch: {pred} predictions vs {truth} truth labels")]
    LengthMismatch { pred: usize, truth: usize },

    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },

    #[error("no labeled images")]
    NoLabeledImages,

    #[error("unknown image_id {0}")]
    UnknownImageId(String),

    #[error("attribute {0:?} is absent from every record")]
    AttributeAbsent(String),

    #[error("transcript version {found} is not supported (expected {expected})")]
    TranscriptVersion { found: u32, expected: u32 },
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable machine-readable error code.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::Json(_) => "parse",
            Error::ZeroImages(_) => "zero_images",
            Error::DuplicateImageId { .. } => "duplicate_image_id",
            Error::UnknownClass { .. } => "unknown_class",
            Error::SampleTooLarge { .. } => "sample_too_large",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Criterion(_) => "invalid_criterion",
            Error::Gateway(e) => e.kind(),
            Error::ClusterParse(_) => "parse_failure",
            Error::KEnforcementFailed { .. } => "k_enforcement_failed",
            Error::EmptyDictionary { .. } => "empty_dictionary",
            Error::StageAborted { .. } => "stage_aborted",
            Error::ConfigMismatch { .. } => "config_mismatch",
            Error::RunNotFound(_) => "run_not_found",
            Error::RunExists(_) => "run_exists",
            Error::ParentIncomplete(_) => "parent_incomplete",
            Error::StoreBusy(_) => "store_busy",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::TooFewItems { .. } => "too_few_items",
            Error::NoLabeledImages => "no_labeled_images",
            Error::UnknownImageId(_) => "unknown_image_id",
            Error::AttributeAbsent(_) => "attribute_absent",
            Error::TranscriptVersion { .. } => "transcript_version",
        }
    }
}
