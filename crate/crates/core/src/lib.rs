//! Visual localization against a 3D landmark map by fusing two candidate
//! searches: a forest of random trees over sign-binarized local descriptors,
//! searched in order of bit-flip probability, and nearest-frame retrieval by
//! global descriptor. Fused candidates are ranked with real-valued
//! descriptors, filtered by a ratio test, and passed to P3P RANSAC.

pub mod config;
pub mod descriptor;
pub mod error;
pub mod gaussian;
pub mod ingest;
pub mod loss;
pub mod map;
pub mod matcher;
pub mod pipeline;
pub mod pose;
pub mod retrieval;
pub mod rtree;
pub mod selftest;
pub mod synth;

pub use descriptor::{BinaryDescriptor, GlobalDescriptor, RealDescriptor};
pub use error::{Error, Result};
pub use map::{FrameId, LandmarkId, MapDatabase};
