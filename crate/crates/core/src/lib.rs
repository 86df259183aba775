//! Appearance-only multi-object tracking.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`geometry`]: boxes, IoU, center distance, NMS.
//! - [`similarity`]: embeddings, cosine and bi-directional softmax matrices.
//! - [`contrastive`]: quasi-dense sample assignment, the multi-positive
//!   contrastive objective with analytic gradients, and a small optimizer.
//! - [`tracker`]: the association engine with backdrops, momentum updates,
//!   tracklet merging and interpolation.
//! - [`metrics`]: CLEAR-MOT, IDF1 and HOTA.
//! - [`synth`]: deterministic synthetic worlds and baselines.
//!
//! IO, file formats and the command line live in the companion `quasitrack`
//! crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod contrastive;
mod error;
pub mod geometry;
pub mod metrics;
pub mod similarity;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::BoundingBox;
pub use similarity::{Embedding, SimilarityMatrix};
