//! Prior-frame retrieval: brute-force nearest database frames by global
//! descriptor, expanded to the landmarks those frames observe.

use std::collections::BTreeSet;

use crate::descriptor::{squared_l2, GlobalDescriptor};
use crate::error::{Error, Result};
use crate::map::{FrameId, LandmarkId, MapDatabase};

pub const DEFAULT_KNN_FRAMES: usize = 20;

/// Borrowed view over the frame table of a map.
#[derive(Clone, Copy, Debug)]
pub struct FrameIndex<'a> {
    map: &'a MapDatabase,
}

impl<'a> FrameIndex<'a> {
    pub fn new(map: &'a MapDatabase) -> Self {
        Self { map }
    }

    pub fn dim(&self) -> usize {
        self.map.global_dim()
    }

    pub fn len(&self) -> usize {
        self.map.frames().len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.frames().is_empty()
    }
}

/// The `k` frames nearest to `query` by L2, ascending, ties to the smaller id.
pub fn knn_frames(query: &GlobalDescriptor, index: &FrameIndex<'_>, k: usize) -> Result<Vec<(FrameId, f64)>> {
    if index.is_empty() {
        return Err(Error::Empty("frame index is empty"));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    crate::error::check_dim(index.dim(), query.dim())?;
    let mut scored: Vec<(f64, FrameId)> = index
        .map
        .frames()
        .iter()
        .map(|f| (squared_l2(query.values(), f.global_descriptor.values()), f.id))
        .collect();
    let by_distance = |a: &(f64, FrameId), b: &(f64, FrameId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance);
        scored.truncate(k);
    }
    scored.sort_by(by_distance);
    Ok(scored.into_iter().map(|(d2, id)| (id, d2.sqrt())).collect())
}

/// Union of the visibility lists of the given frames.
pub fn frame_candidates(frames: &[FrameId], map: &MapDatabase) -> Result<BTreeSet<LandmarkId>> {
    let mut out = BTreeSet::new();
    for &id in frames {
        let frame = map.frame(id).ok_or(Error::UnknownId(id.0 as u64))?;
        out.extend(frame.visible_landmarks.iter().copied());
    }
    Ok(out)
}
