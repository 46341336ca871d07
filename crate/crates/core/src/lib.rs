//! Soft-label multiclass gradient boosting with a weighted Brier objective,
//! plus the surrounding activity-recognition pipeline: per-second feature
//! aggregation, handedness correction, subsequence resplitting, lag/lead
//! features, out-of-fold stack transferring, stacking, temporal smoothing,
//! and a seeded synthetic scenario generator for end-to-end exercise.
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is
//! enabled (the default); disabling it or capping the worker count at 1
//! selects a sequential path that produces bit-identical results.

pub mod data;
pub mod ensembles;
pub mod error;
pub mod exec;
pub mod learners;
pub mod numeric;
pub mod objectives;
pub mod persist;
pub mod pipeline;
pub mod postprocess;
pub mod synthgen;
pub mod boosting;
pub mod trees;

pub use error::{Error, Result};
