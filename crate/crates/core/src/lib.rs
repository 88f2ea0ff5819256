//! Caption rewriting and yes/no hallucination probing over
//! OpenAI-compatible chat endpoints.
//!
//! The rewrite side turns image-caption pairs into keyword-constrained
//! paraphrases for fine-tuning. The probe side builds yes/no question
//! banks, asks a model under test, and scores the answers.

pub mod checkpoint;
pub mod datamodel;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod mock;
pub mod probe;
pub mod questions;
pub mod rewrite;
pub mod scalar;

pub use scalar::{Percent, Rational, Scalar};

/// Metrics as floating-point fractions.
pub type Metrics = metrics::MetricSet<f64>;
/// Metrics as exact fractions, for checks that must not drift.
pub type ExactMetrics = metrics::MetricSet<Rational>;
