//! Data-free class-incremental learning over feature vectors.
//!
//! A backbone is trained on the first task and frozen. Every later task
//! re-trains only a growing linear head. Old classes are kept alive by
//! pseudo features, which are new-class batches translated onto stored
//! class prototypes, and by a covariance-aware prototype loss. New classes
//! get a cross-entropy restricted to their own slice of the head.
//!
//! Module map:
//! - [`numerics`]: dense matrix type and scalar kernels
//! - [`extractor`]: trainable-then-frozen backbone
//! - [`prototypes`]: per-class statistics and the prototype store
//! - [`replay`]: pseudo-feature generation with batch prototypes
//! - [`losses`]: value-and-gradient losses
//! - [`classifier`]: incremental linear head and Adam
//! - [`engine`]: task schedule and experiment loop
//! - [`evalmetrics`]: accuracy, IFM and report formats
//! - [`dataio`]: dataset format, splitting, batching, synthetic data
//! - [`config`], [`checkpoint`]: experiment files

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod dataio;
pub mod engine;
mod error;
pub mod evalmetrics;
pub mod extractor;
pub mod losses;
pub mod numerics;
pub mod prototypes;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};

/// Classifier slot of a class. Slots are contiguous and assigned in task
/// order; dataset labels map onto them through the task schedule.
pub type ClassId = u32;
