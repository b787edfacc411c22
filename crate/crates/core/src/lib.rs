//! Synthetic fairness-augmentation engine: a style-based generator over
//! feature vectors, style-space classifiers, gradient traversal toward the
//! disease class, and subgroup-aware evaluation.

pub mod classify;
pub mod csvio;
pub mod error;
pub mod fairmetrics;
pub mod ndcore;
pub mod pipeline;
pub mod stylegen;
pub mod synthgen;
pub mod traverse;
pub mod weights;

pub use error::{Error, Result};
pub use ndcore::{Rng, Tensor};
pub use pipeline::{run_all, Context, ExperimentConfig, RunManifest, RunOptions, Stage};
pub use synthgen::{FeatureRecord, Source, Subgroup};
