//! Candidate fusion and 2D-3D matching.
//!
//! For every query keypoint the tree branch contributes the landmarks found in
//! the most probable leaves, and the retrieval branch contributes every
//! landmark visible in the nearest database frames (computed once per image).
//! The union is searched linearly with real descriptors and the match is kept
//! when it passes the distance ratio test against the best other landmark.

use std::collections::BTreeSet;
use std::str::FromStr;

use rayon::prelude::*;

use crate::descriptor::{squared_l2, GlobalDescriptor, RealDescriptor};
use crate::error::{Error, Result};
use crate::map::{LandmarkId, MapDatabase, QueryKeypoint};
use crate::retrieval::{frame_candidates, knn_frames, FrameIndex, DEFAULT_KNN_FRAMES};
use crate::rtree::{priority_search, Forest, PerturbationModel, DEFAULT_MAX_LEAVES};

pub const DEFAULT_RATIO_THRESHOLD: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SearchMode {
    Fused,
    TreeOnly,
    RetrievalOnly,
}

impl SearchMode {
    pub fn uses_trees(self) -> bool {
        self != SearchMode::RetrievalOnly
    }

    pub fn uses_retrieval(self) -> bool {
        self != SearchMode::TreeOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Fused => "fused",
            SearchMode::TreeOnly => "tree_only",
            SearchMode::RetrievalOnly => "retrieval_only",
        }
    }
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(SearchMode::Fused),
            "tree_only" | "tree-only" => Ok(SearchMode::TreeOnly),
            "retrieval_only" | "retrieval-only" => Ok(SearchMode::RetrievalOnly),
            other => Err(Error::Config(format!("unknown search mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub max_leaves: usize,
    pub knn_frames_k: usize,
    pub ratio_threshold: f64,
    pub mode: SearchMode,
    /// Reject matches whose candidate set holds a single landmark.
    pub strict_ratio: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_leaves: DEFAULT_MAX_LEAVES,
            knn_frames_k: DEFAULT_KNN_FRAMES,
            ratio_threshold: DEFAULT_RATIO_THRESHOLD,
            mode: SearchMode::Fused,
            strict_ratio: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_leaves == 0 {
            return Err(Error::Config("max_leaves must be at least 1".into()));
        }
        if self.knn_frames_k == 0 {
            return Err(Error::Config("knn_frames_k must be at least 1".into()));
        }
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "ratio_threshold must be in (0, 1], got {}",
                self.ratio_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub query_index: usize,
    pub landmark_id: LandmarkId,
    pub distance: f64,
    pub ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureMatch {
    pub landmark_id: LandmarkId,
    pub distance: f64,
    pub ratio: f64,
}

/// Deduplicated union of the two branch candidate sets.
pub fn fuse_candidates(tree_set: &BTreeSet<LandmarkId>, frame_set: &BTreeSet<LandmarkId>) -> BTreeSet<LandmarkId> {
    tree_set.union(frame_set).copied().collect()
}

/// Nearest candidate landmark by real-descriptor L2, checked against the
/// nearest descriptor of any other landmark.
pub fn match_query_feature(
    query: &RealDescriptor,
    candidates: &BTreeSet<LandmarkId>,
    map: &MapDatabase,
    ratio_threshold: f64,
    strict: bool,
) -> Option<FeatureMatch> {
    let mut best: Option<(f64, LandmarkId)> = None;
    let mut second = f64::INFINITY;
    for &id in candidates {
        let Some(landmark) = map.landmark(id) else {
            continue;
        };
        let d2 = landmark
            .descriptors
            .iter()
            .map(|d| squared_l2(query.values(), d.real().values()))
            .fold(f64::INFINITY, f64::min);
        match best {
            Some((b, _)) if d2 >= b => second = second.min(d2),
            Some((b, _)) => {
                second = b;
                best = Some((d2, id));
            }
            None => best = Some((d2, id)),
        }
    }
    let (best_d2, landmark_id) = best?;
    if second.is_infinite() && strict {
        return None;
    }
    let distance = best_d2.sqrt();
    let second = second.sqrt();
    let ratio = if second.is_infinite() {
        0.0
    } else if second == 0.0 {
        1.0
    } else {
        distance / second
    };
    (ratio <= ratio_threshold).then_some(FeatureMatch {
        landmark_id,
        distance,
        ratio,
    })
}

/// The map plus the search structures built over it.
#[derive(Clone, Copy, Debug)]
pub struct MapIndex<'a> {
    pub map: &'a MapDatabase,
    pub forest: &'a Forest,
    pub model: PerturbationModel,
}

impl<'a> MapIndex<'a> {
    pub fn new(map: &'a MapDatabase, forest: &'a Forest, model: PerturbationModel) -> Result<Self> {
        crate::error::check_dim(map.local_dim(), forest.dim())?;
        if forest.entry_count() != map.descriptor_count() {
            return Err(Error::InvalidInput(format!(
                "forest indexes {} descriptors but the map holds {}",
                forest.entry_count(),
                map.descriptor_count()
            )));
        }
        Ok(Self { map, forest, model })
    }
}

/// Landmarks visible in the prior frames of a query image.
pub fn retrieval_candidates(
    query_global: &GlobalDescriptor,
    index: &MapIndex<'_>,
    config: &SearchConfig,
) -> Result<BTreeSet<LandmarkId>> {
    let frames = knn_frames(query_global, &FrameIndex::new(index.map), config.knn_frames_k)?;
    let ids: Vec<_> = frames.into_iter().map(|(id, _)| id).collect();
    frame_candidates(&ids, index.map)
}

/// Landmarks stored in the most probable leaves for one query descriptor.
pub fn tree_candidates(
    query: &RealDescriptor,
    index: &MapIndex<'_>,
    config: &SearchConfig,
) -> Result<BTreeSet<LandmarkId>> {
    let res = priority_search(index.forest, query.values(), &index.model, config.max_leaves)?;
    Ok(res.candidates.into_iter().map(|e| e.landmark).collect())
}

/// Per-keypoint candidate sets under the configured mode.
pub fn candidate_sets(
    keypoints: &[QueryKeypoint],
    query_global: &GlobalDescriptor,
    index: &MapIndex<'_>,
    config: &SearchConfig,
) -> Result<Vec<BTreeSet<LandmarkId>>> {
    config.validate()?;
    for kp in keypoints {
        crate::error::check_dim(index.map.local_dim(), kp.descriptor.dim())?;
    }
    let frame_set = if config.mode.uses_retrieval() {
        retrieval_candidates(query_global, index, config)?
    } else {
        BTreeSet::new()
    };
    keypoints
        .par_iter()
        .map(|kp| {
            if config.mode.uses_trees() {
                let tree_set = tree_candidates(kp.descriptor.real(), index, config)?;
                Ok(fuse_candidates(&tree_set, &frame_set))
            } else {
                Ok(frame_set.clone())
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchStats {
    pub keypoints: usize,
    pub mean_candidates: f64,
    pub accepted: usize,
}

/// Matches every keypoint of one query image; output follows keypoint order.
pub fn match_image(
    keypoints: &[QueryKeypoint],
    query_global: &GlobalDescriptor,
    index: &MapIndex<'_>,
    config: &SearchConfig,
) -> Result<(Vec<Correspondence>, MatchStats)> {
    let sets = candidate_sets(keypoints, query_global, index, config)?;
    let matches: Vec<Option<Correspondence>> = keypoints
        .par_iter()
        .zip(sets.par_iter())
        .enumerate()
        .map(|(i, (kp, set))| {
            match_query_feature(kp.descriptor.real(), set, index.map, config.ratio_threshold, config.strict_ratio).map(
                |m| Correspondence {
                    query_index: i,
                    landmark_id: m.landmark_id,
                    distance: m.distance,
                    ratio: m.ratio,
                },
            )
        })
        .collect();
    let correspondences: Vec<_> = matches.into_iter().flatten().collect();
    let stats = MatchStats {
        keypoints: keypoints.len(),
        mean_candidates: if sets.is_empty() {
            0.0
        } else {
            sets.iter().map(BTreeSet::len).sum::<usize>() as f64 / sets.len() as f64
        },
        accepted: correspondences.len(),
    };
    Ok((correspondences, stats))
}
