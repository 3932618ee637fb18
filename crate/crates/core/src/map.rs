//! Landmarks, frames and the validated map database that ties them together.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::Vector3;

use crate::descriptor::{binarize, BinaryDescriptor, GlobalDescriptor, RealDescriptor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LandmarkId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(pub u32);

impl fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A real descriptor together with its sign-binarized form. The binary half
/// is always derived from the real half.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorPair {
    real: RealDescriptor,
    binary: BinaryDescriptor,
}

impl DescriptorPair {
    pub fn new(real: RealDescriptor) -> Self {
        let binary = binarize(&real);
        Self { real, binary }
    }

    pub fn real(&self) -> &RealDescriptor {
        &self.real
    }

    pub fn binary(&self) -> &BinaryDescriptor {
        &self.binary
    }

    pub fn dim(&self) -> usize {
        self.real.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkRecord {
    pub id: LandmarkId,
    /// World-frame position in meters.
    pub position: Vector3<f64>,
    pub descriptors: Vec<DescriptorPair>,
    pub observing_frames: BTreeSet<FrameId>,
}

impl LandmarkRecord {
    /// Landmark with no observing frames yet; [`MapDatabase::new`] fills them
    /// in from the frame visibility lists.
    pub fn new(id: LandmarkId, position: Vector3<f64>, descriptors: Vec<RealDescriptor>) -> Self {
        Self {
            id,
            position,
            descriptors: descriptors.into_iter().map(DescriptorPair::new).collect(),
            observing_frames: BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub id: FrameId,
    pub global_descriptor: GlobalDescriptor,
    pub visible_landmarks: BTreeSet<LandmarkId>,
}

/// Location, orientation and scale of a detected keypoint, in pixels and radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeypointGeometry {
    pub pixel: [f64; 2],
    pub orientation: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryKeypoint {
    pub geometry: KeypointGeometry,
    pub descriptor: DescriptorPair,
}

impl QueryKeypoint {
    pub fn new(geometry: KeypointGeometry, descriptor: RealDescriptor) -> Result<Self> {
        if !(geometry.scale > 0.0) || !geometry.scale.is_finite() {
            return Err(Error::InvalidInput(format!(
                "keypoint scale must be positive, got {}",
                geometry.scale
            )));
        }
        if !geometry.pixel.iter().chain([&geometry.orientation]).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("keypoint geometry is not finite".into()));
        }
        Ok(Self {
            geometry,
            descriptor: DescriptorPair::new(descriptor),
        })
    }

    /// Checks that the keypoint lies inside an image of the given size.
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        let [u, v] = self.geometry.pixel;
        if u < 0.0 || v < 0.0 || u > (width as f64 - 1.0) || v > (height as f64 - 1.0) {
            return Err(Error::InvalidInput(format!(
                "keypoint ({u}, {v}) outside {width}x{height} image"
            )));
        }
        Ok(())
    }
}

/// Validated landmark and frame tables with bidirectional visibility.
#[derive(Clone, Debug)]
pub struct MapDatabase {
    landmarks: Vec<LandmarkRecord>,
    frames: Vec<FrameRecord>,
    landmark_index: HashMap<LandmarkId, usize>,
    frame_index: HashMap<FrameId, usize>,
    local_dim: usize,
    global_dim: usize,
}

impl MapDatabase {
    /// Validates the tables and rebuilds every landmark's observing-frame set
    /// from the frame visibility lists. Both tables are sorted by id.
    pub fn new(mut landmarks: Vec<LandmarkRecord>, mut frames: Vec<FrameRecord>) -> Result<Self> {
        if landmarks.is_empty() {
            return Err(Error::Empty("map has no landmarks"));
        }
        if frames.is_empty() {
            return Err(Error::Empty("map has no frames"));
        }
        landmarks.sort_by_key(|l| l.id);
        frames.sort_by_key(|f| f.id);

        let dup_l: Vec<u64> = landmarks
            .windows(2)
            .filter(|w| w[0].id == w[1].id)
            .map(|w| w[0].id.0 as u64)
            .collect();
        if !dup_l.is_empty() {
            return Err(integrity("duplicate landmark ids", dup_l));
        }
        let dup_f: Vec<u64> = frames
            .windows(2)
            .filter(|w| w[0].id == w[1].id)
            .map(|w| w[0].id.0 as u64)
            .collect();
        if !dup_f.is_empty() {
            return Err(integrity("duplicate frame ids", dup_f));
        }

        let no_desc: Vec<u64> = landmarks
            .iter()
            .filter(|l| l.descriptors.is_empty())
            .map(|l| l.id.0 as u64)
            .collect();
        if !no_desc.is_empty() {
            return Err(integrity("landmarks without descriptors", no_desc));
        }
        let local_dim = landmarks[0].descriptors[0].dim();
        for l in &landmarks {
            for d in &l.descriptors {
                if d.dim() != local_dim {
                    return Err(Error::DimensionMismatch {
                        expected: local_dim,
                        actual: d.dim(),
                    });
                }
            }
            if !l.position.iter().all(|v| v.is_finite()) {
                return Err(integrity("landmark position not finite", vec![l.id.0 as u64]));
            }
        }
        let global_dim = frames[0].global_descriptor.dim();
        for f in &frames {
            if f.global_descriptor.dim() != global_dim {
                return Err(Error::DimensionMismatch {
                    expected: global_dim,
                    actual: f.global_descriptor.dim(),
                });
            }
        }

        let landmark_index: HashMap<_, _> =
            landmarks.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        let frame_index: HashMap<_, _> = frames.iter().enumerate().map(|(i, f)| (f.id, i)).collect();

        let mut unknown = BTreeSet::new();
        for f in &frames {
            unknown.extend(
                f.visible_landmarks
                    .iter()
                    .filter(|id| !landmark_index.contains_key(id))
                    .map(|id| id.0 as u64),
            );
        }
        for l in &landmarks {
            unknown.extend(
                l.observing_frames
                    .iter()
                    .filter(|id| !frame_index.contains_key(id))
                    .map(|id| id.0 as u64),
            );
        }
        if !unknown.is_empty() {
            return Err(integrity("references to unknown ids", unknown.into_iter().collect()));
        }

        // Visibility is the union of both directions.
        for l in &landmarks {
            for fid in &l.observing_frames {
                frames[frame_index[fid]].visible_landmarks.insert(l.id);
            }
        }
        for f in &frames {
            for lid in &f.visible_landmarks {
                landmarks[landmark_index[lid]].observing_frames.insert(f.id);
            }
        }
        let unobserved: Vec<u64> = landmarks
            .iter()
            .filter(|l| l.observing_frames.is_empty())
            .map(|l| l.id.0 as u64)
            .collect();
        if !unobserved.is_empty() {
            return Err(integrity("landmarks not visible in any frame", unobserved));
        }

        Ok(Self {
            landmarks,
            frames,
            landmark_index,
            frame_index,
            local_dim,
            global_dim,
        })
    }

    pub fn landmarks(&self) -> &[LandmarkRecord] {
        &self.landmarks
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn landmark(&self, id: LandmarkId) -> Option<&LandmarkRecord> {
        self.landmark_index.get(&id).map(|&i| &self.landmarks[i])
    }

    pub fn frame(&self, id: FrameId) -> Option<&FrameRecord> {
        self.frame_index.get(&id).map(|&i| &self.frames[i])
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn global_dim(&self) -> usize {
        self.global_dim
    }

    /// Every (landmark id, descriptor index, binary descriptor) entry, in id order.
    pub fn binary_entries(&self) -> Vec<(crate::rtree::Entry, BinaryDescriptor)> {
        self.landmarks
            .iter()
            .flat_map(|l| {
                l.descriptors.iter().enumerate().map(move |(k, d)| {
                    (
                        crate::rtree::Entry {
                            landmark: l.id,
                            descriptor: k as u32,
                        },
                        d.binary().clone(),
                    )
                })
            })
            .collect()
    }

    pub fn descriptor_count(&self) -> usize {
        self.landmarks.iter().map(|l| l.descriptors.len()).sum()
    }
}

fn integrity(message: &str, ids: Vec<u64>) -> Error {
    Error::Integrity {
        message: message.to_string(),
        ids,
    }
}
