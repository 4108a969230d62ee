//! Criterion-conditioned image clustering.
//!
//! A dataset of images is clustered according to a natural-language text
//! criterion by chaining a vision-language model (per-image descriptions)
//! with a large language model (raw labels, cluster-name discovery and
//! cluster assignment). Runs are checkpointed per stage, can be resumed,
//! and can be refined into child runs by editing the criterion. Every model
//! call is content-addressed, so runs can be recorded and replayed offline.
//!
//! The [`evaluation`] module holds the clustering metrics (Hungarian-matched
//! accuracy, NMI, ARI) and the per-cluster fairness audit. Its numeric code is
//! generic over the scalar type; the aliases below pick the usual ones.

pub mod error;
pub mod evaluation;
pub mod gateway;
pub mod ingest;
pub mod pipeline;
pub mod prompts;

mod digest;
mod fsutil;

pub use digest::Digest;
pub use error::{Error, Result};

/// Default floating-point scalar for metric reports.
pub type Real = f64;

/// Exact rational scalar, used to check metrics without rounding.
pub type Exact = num_rational::Ratio<i128>;

/// Evaluation report over [`Real`].
pub type EvalReport = evaluation::EvalReport<Real>;

/// Single-precision evaluation report.
pub type EvalReportF32 = evaluation::EvalReport<f32>;

/// Fairness report over [`Real`].
pub type FairnessReport = evaluation::FairnessReport<Real>;
