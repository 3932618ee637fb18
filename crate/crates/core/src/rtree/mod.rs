//! Random-tree index over binary descriptors with probabilistic best-first search.
//!
//! Each tree routes a binary descriptor down `depth` node tests, one descriptor
//! dimension per internal node, and stores database entries in sparse leaf
//! buckets. A query is a real descriptor: every node test turns into a
//! branch probability under a Gaussian perturbation model, and
//! [`priority_search`] visits nonempty leaves of the whole forest in
//! decreasing probability.

mod container;
mod model;
mod search;
mod tree;

pub use container::{read_forest, write_forest, FOREST_MAGIC, FOREST_VERSION};
pub use model::{
    estimate_perturbation_model, leaf_log_probability, node_log_probability, node_probability,
    ModelEstimate, PerturbationModel, SIGMA_FLOOR,
};
pub use search::{build_forest, priority_search, Forest, LeafHit, SearchResult};
pub use tree::{build_tree, LeafPath, RandomTree, TreeParams, MAX_DEPTH};

use crate::map::LandmarkId;

/// One database descriptor: its landmark and its index within that landmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entry {
    pub landmark: LandmarkId,
    pub descriptor: u32,
}

/// Default number of trees.
pub const DEFAULT_TREES: usize = 6;
/// Default tree depth.
pub const DEFAULT_DEPTH: u32 = 23;
/// Default number of nonempty leaves visited per query.
pub const DEFAULT_MAX_LEAVES: usize = 100;
/// Default number of dimensions scored at each internal node.
pub const DEFAULT_CANDIDATE_DIMS: usize = 64;
/// Default number of dimensions sampled when fitting the perturbation model.
pub const DEFAULT_TESTS_TO_SAMPLE: usize = 10;
/// Default number of matched pairs drawn per sampled dimension.
pub const DEFAULT_SAMPLES_PER_TEST: usize = 100_000;
