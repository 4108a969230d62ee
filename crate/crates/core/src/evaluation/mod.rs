//! Clustering metrics and audits.
//!
//! Everything here is generic over the scalar type: `f64` for reports,
//! `f32` where memory matters, and exact `Ratio<i128>` for accuracy, ARI
//! and fairness ratios when boundaries must compare exactly. NMI needs
//! logarithms and is available for floating-point scalars only.

mod contingency;
mod fairness;
pub mod hungarian;
mod metrics;
mod report;
mod run;
mod scalar;

pub use contingency::Contingency;
pub use fairness::{compare_fairness, fairness_from_groups, ClusterFairness, DisparityChange, FairnessReport};
pub use metrics::{
    accuracy_from_contingency, ari, ari_from_contingency, hungarian_accuracy, nmi, nmi_from_contingency, Accuracy,
    MappingMode,
};
pub use report::{evaluate, parse_confusion_tsv, EvalReport, MappedCluster};
pub use run::{
    evaluate_run, fairness_audit, load_human_labels, HumanLabel, LabelSource, DEFAULT_FLAG_THRESHOLD,
};
pub use scalar::{RealScalar, Scalar};
