//! Introspective deep metric learning at desk scale.
//!
//! Samples are embedded as a semantic vector `s` and an uncertainty vector `u`.
//! Pairwise comparisons use the introspective similarity metric, which
//! attenuates the semantic distance `alpha = |s1 - s2|` by the relative
//! uncertainty `(|u1 + u2| + gamma) / alpha`. The crate provides the metric
//! family, seven metric-learning losses that accept any metric, mixup with
//! set-valued labels, a small two-headed encoder with exact gradients, a
//! retrieval/clustering evaluation suite and an experiment harness.

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod losses;
pub mod metric;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod types;

pub use error::{IdmlError, Result};
pub use metric::Metric;
pub use rng::Rng;
pub use types::{Batch, EmbeddingPair, LabelSet, MetricParams, Sample, Vector};
