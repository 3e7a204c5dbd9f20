//! Plane-sweep multi-view stereo with variance and softmin cost aggregation,
//! a photometric training objective with occlusion masking, depth-map
//! fusion, and an evaluation toolkit for reconstructions in the wild.

pub mod error;
pub mod geometry;
pub mod benchmark;
pub mod costvolume;
pub mod fusion;
pub mod imagery;
pub mod photoloss;
pub mod pipeline;
pub mod synthdata;

pub use error::{Error, Result};
