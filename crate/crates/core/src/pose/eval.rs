use std::collections::BTreeMap;

use super::camera::CameraPose;
use crate::error::{Error, Result};

/// Translation/rotation recall thresholds in meters and degrees.
pub const DEFAULT_RECALL_THRESHOLDS: [(f64, f64); 3] = [(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)];

/// Distance between camera centers (meters) and relative rotation angle (degrees).
pub fn pose_error(estimated: &CameraPose, ground_truth: &CameraPose) -> (f64, f64) {
    let dt = (estimated.center() - ground_truth.center()).norm();
    let rel = ground_truth.rotation().transpose() * estimated.rotation();
    // atan2 form of arccos((tr - 1) / 2), stable near 0 and 180 degrees
    let cos = (rel.trace() - 1.0) / 2.0;
    let sin = nalgebra::Vector3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]).norm() / 2.0;
    (dt, sin.atan2(cos).to_degrees())
}

/// Percentage of queries within each `(meters, degrees)` threshold pair.
/// `results` maps query id to the estimated pose, `None` when localization
/// failed; the key sets of both maps must agree.
pub fn recall_at_thresholds(
    results: &BTreeMap<u64, Option<CameraPose>>,
    ground_truths: &BTreeMap<u64, CameraPose>,
    thresholds: &[(f64, f64)],
) -> Result<Vec<f64>> {
    if let Some(id) = results.keys().find(|id| !ground_truths.contains_key(id)) {
        return Err(Error::Integrity {
            message: format!("query {id} has a result but no ground truth"),
            ids: vec![*id],
        });
    }
    if let Some(id) = ground_truths.keys().find(|id| !results.contains_key(id)) {
        return Err(Error::Integrity {
            message: format!("query {id} has ground truth but no result"),
            ids: vec![*id],
        });
    }
    if ground_truths.is_empty() {
        return Err(Error::Empty("no queries to evaluate"));
    }
    let errors: Vec<Option<(f64, f64)>> = results
        .iter()
        .map(|(id, est)| est.as_ref().map(|p| pose_error(p, &ground_truths[id])))
        .collect();
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&(t, r)| {
            let hits = errors.iter().flatten().filter(|(dt, dr)| *dt <= t && *dr <= r).count();
            100.0 * hits as f64 / n
        })
        .collect())
}
