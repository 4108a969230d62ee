//! The four-step clustering pipeline and its run store.
//!
//! Step 1 describes each image with the VLM, Step 2a turns each description
//! into a short raw label, Step 2b condenses the label dictionary into K
//! cluster names, and Step 3 assigns every description to one of them.

mod dictionary;
mod matcher;
mod steps;
mod store;
mod types;

pub use dictionary::{build_dictionary, filter_dictionary, DictEntry, LabelDictionary};
pub use matcher::{edit_distance, edit_ratio, match_answer, Match, DEFAULT_FUZZY_RATIO};
pub use steps::{
    discover_clusters, fallback_rate, run_step1, run_step2a, run_step3, Discovery, PipelineConfig, Step2bAttempt,
};
pub use store::{
    config_digest, records_by_id, ClusterLine, ClusterSize, Lineage, MetricSnapshot, Models, Pipeline, Progress,
    ResumeOverrides, RunConfig, RunOptions, RunState, RunStore, RunSummary, StageProgress, StoreLock,
};
pub use types::{Assignment, Counters, Description, ItemError, MatchKind, RawLabel, Stage, StageCounter};
