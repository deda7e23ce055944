//! Diagnostics for LLM code comprehension on input/output consistency.
//!
//! The crate builds a labeled dataset of `(program, input, output)` triples,
//! extracts static code metrics, collects binary judgments from target
//! models, predicts per-sample success from the metrics with gradient-boosted
//! trees, and explains that predictor with permutation-sampled SAGE values.

pub mod atomic;
pub mod corpus;
pub mod hashing;
pub mod judge;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod sage;
pub mod sidecar;
