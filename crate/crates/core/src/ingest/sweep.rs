use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::formats::{QueryImage, QuerySet};
use super::image::{describe_patch, extract_patch, thumbnail_descriptor, GrayImage};
use crate::config::RunConfig;
use crate::error::Result;
use crate::map::{FrameId, FrameRecord, KeypointGeometry, LandmarkId, LandmarkRecord, MapDatabase, QueryKeypoint};
use crate::matcher::MapIndex;
use crate::pipeline::{build_index, fit_model, fit_model_synthetic, localize_all};
use crate::pose::{CameraIntrinsics, LocalizationStatus};

/// Grid of the thumbnail used as a global descriptor.
const THUMBNAIL_GRID: (usize, usize) = (8, 6);
/// Perturbation used to fit the model when no landmark has two descriptors.
const FALLBACK_SIGMA: f64 = 0.05;

/// One image with keypoints. For database images the landmark ids say which
/// landmark each keypoint observes; for query images they are ignored.
#[derive(Clone, Debug)]
pub struct ImageObservations {
    pub id: u64,
    pub image: GrayImage,
    pub keypoints: Vec<(LandmarkId, KeypointGeometry)>,
}

#[derive(Clone, Debug)]
pub struct SweepInput {
    pub intrinsics: CameraIntrinsics,
    pub landmarks: Vec<(LandmarkId, Vector3<f64>)>,
    pub database: Vec<ImageObservations>,
    pub queries: Vec<ImageObservations>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub coefficient: f64,
    pub registered: usize,
    pub queries: usize,
    /// Query keypoints whose patch could be cropped.
    pub described_keypoints: usize,
}

/// Map whose descriptors are computed from database patches at `coefficient`.
/// `None` when no patch could be described.
pub fn map_at_coefficient(input: &SweepInput, coefficient: f64) -> Result<Option<MapDatabase>> {
    let mut descriptors: BTreeMap<LandmarkId, Vec<_>> = BTreeMap::new();
    let mut frames = Vec::new();
    for view in &input.database {
        let mut visible = std::collections::BTreeSet::new();
        for (id, kp) in &view.keypoints {
            let Ok(patch) = extract_patch(&view.image, kp, coefficient) else {
                continue;
            };
            let Ok(desc) = describe_patch(&patch) else {
                continue;
            };
            descriptors.entry(*id).or_default().push(desc);
            visible.insert(*id);
        }
        if !visible.is_empty() {
            frames.push(FrameRecord {
                id: FrameId(view.id as u32),
                global_descriptor: thumbnail_descriptor(&view.image, THUMBNAIL_GRID.0, THUMBNAIL_GRID.1)?,
                visible_landmarks: visible,
            });
        }
    }
    if frames.is_empty() {
        return Ok(None);
    }
    let positions: BTreeMap<LandmarkId, Vector3<f64>> = input.landmarks.iter().copied().collect();
    let landmarks = descriptors
        .into_iter()
        .map(|(id, descs)| LandmarkRecord::new(id, positions[&id], descs))
        .collect();
    MapDatabase::new(landmarks, frames).map(Some)
}

/// Query set whose keypoints are the describable ones at `coefficient`.
pub fn queries_at_coefficient(input: &SweepInput, coefficient: f64) -> Result<QuerySet> {
    let mut queries = Vec::with_capacity(input.queries.len());
    for view in &input.queries {
        let mut keypoints = Vec::new();
        for (_, kp) in &view.keypoints {
            let Ok(patch) = extract_patch(&view.image, kp, coefficient) else {
                continue;
            };
            if let Ok(desc) = describe_patch(&patch) {
                keypoints.push(QueryKeypoint::new(*kp, desc)?);
            }
        }
        queries.push(QueryImage {
            id: view.id,
            global: thumbnail_descriptor(&view.image, THUMBNAIL_GRID.0, THUMBNAIL_GRID.1)?,
            keypoints,
        });
    }
    Ok(QuerySet {
        intrinsics: Some(input.intrinsics),
        queries,
    })
}

/// Number of queries localized at each patch coefficient. Descriptors on
/// both sides are recomputed per coefficient, so keypoints near the image
/// border drop out as the crop grows.
pub fn coefficient_sweep(input: &SweepInput, coefficients: &[f64], cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(coefficients.len());
    for &coefficient in coefficients {
        let queries = queries_at_coefficient(input, coefficient)?;
        let described_keypoints = queries.queries.iter().map(|q| q.keypoints.len()).sum();
        let registered = match map_at_coefficient(input, coefficient)? {
            None => 0,
            Some(map) => {
                let forest = build_index(&map, cfg)?;
                let model = fit_model(&map, cfg)
                    .or_else(|_| fit_model_synthetic(&map, FALLBACK_SIGMA, cfg))?
                    .model;
                let index = MapIndex::new(&map, &forest, model)?;
                localize_all(&index, &queries, cfg)?
                    .iter()
                    .filter(|r| r.status == LocalizationStatus::Ok)
                    .count()
            }
        };
        log::info!("coefficient {coefficient}: {registered}/{} registered", input.queries.len());
        rows.push(SweepRow {
            coefficient,
            registered,
            queries: input.queries.len(),
            described_keypoints,
        });
    }
    Ok(rows)
}
