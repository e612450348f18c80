//! Action recognition over heterogeneous skeleton formats with
//! open-vocabulary classification against text label embeddings.
//!
//! - [`skeleton`]: formats, the unified joint space, padding and modalities
//! - [`encoder`]: the two-stream Transformer encoder and its projections
//! - [`loss`]: contrastive alignment terms
//! - [`textbank`], [`labelspace`]: label embeddings, clustering, splits
//! - [`eval`]: scoring, multi-label accuracy, calibrated zero-shot metrics
//! - [`motiongen`]: a seeded synthetic corpus for testing end to end
//! - [`harness`]: training, checkpoints and the file-driven pipeline

pub mod encoder;
pub mod eval;
pub mod error;
pub mod harness;
pub mod labelspace;
pub mod loss;
pub mod motiongen;
pub mod seed;
pub mod skeleton;
pub mod textbank;

pub use error::{Error, Result};
