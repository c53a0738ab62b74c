//! Metric-learning toolkit for cross-modal (audio / caption) retrieval.
//!
//! - [`embedding`]: matrices, row normalization, cosine similarity matrix
//! - [`objectives`]: triplet-sum, triplet-max, triplet-weighted and NT-Xent,
//!   each with its exact gradient
//! - [`encoder`]: per-modality MLP projection heads and checkpoints
//! - [`optim`]: Adam and the step-decay learning-rate schedule
//! - [`eval`]: bidirectional R@k with multi-caption grouping
//! - [`data`]: synthetic generator, feature files, collision-free batching
//! - [`trainer`]: the training loop, best-model selection, multi-seed runs
//! - [`report`]: CSV / markdown result tables
//! - [`cli`]: the `asem` command-line front end
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod cli;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod objectives;
pub mod optim;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
