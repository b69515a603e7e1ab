//! Rigid-body motion simulation in k-space, encoder-decoder artifact
//! suppression trained from scratch, and no-reference quality scoring for
//! 3D MR volumes.

pub mod error;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod volume;

pub use error::{Error, Result};
