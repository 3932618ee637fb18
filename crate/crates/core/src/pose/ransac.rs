use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::camera::{project, CameraIntrinsics, CameraPose};
use super::p3p::{dlt_pose, minimal_candidates, PnpCorrespondence};
use crate::error::{Error, Result};

pub const DEFAULT_INLIER_THRESHOLD_PX: f64 = 8.0;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
pub const DEFAULT_CONFIDENCE: f64 = 0.9999;
pub const DEFAULT_MIN_INLIERS: usize = 12;

const REFINE_MAX_ITERATIONS: usize = 20;
const REFINE_STEP_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub inlier_threshold_px: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold_px: DEFAULT_INLIER_THRESHOLD_PX,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            confidence: DEFAULT_CONFIDENCE,
            min_inliers: DEFAULT_MIN_INLIERS,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold_px > 0.0 && self.inlier_threshold_px.is_finite()) {
            return Err(Error::Config(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold_px
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        if self.min_inliers < 4 {
            return Err(Error::Config(format!("min_inliers must be at least 4, got {}", self.min_inliers)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LocalizationStatus {
    Ok,
    InsufficientMatches,
    RansacFailed,
}

impl LocalizationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::InsufficientMatches => "insufficient_matches",
            Self::RansacFailed => "ransac_failed",
        }
    }
}

impl std::str::FromStr for LocalizationStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(Self::Ok),
            "insufficient_matches" => Ok(Self::InsufficientMatches),
            "ransac_failed" => Ok(Self::RansacFailed),
            other => Err(Error::InvalidInput(format!("unknown status {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    pub pose: Option<CameraPose>,
    /// Ascending indices into the correspondence list.
    pub inliers: Vec<usize>,
    pub iterations_used: usize,
    pub status: LocalizationStatus,
}

impl LocalizationResult {
    fn failed(status: LocalizationStatus, iterations_used: usize) -> Self {
        Self {
            pose: None,
            inliers: Vec::new(),
            iterations_used,
            status,
        }
    }
}

fn reprojection_sq(pose: &CameraPose, k: &CameraIntrinsics, c: &PnpCorrespondence) -> f64 {
    match project(pose, k, &c.point) {
        Ok(px) => (px - c.pixel).norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

fn inliers_of(pose: &CameraPose, k: &CameraIntrinsics, corr: &[PnpCorrespondence], threshold: f64) -> (Vec<usize>, f64) {
    let t2 = threshold * threshold;
    let mut idx = Vec::new();
    let mut err = 0.0;
    for (i, c) in corr.iter().enumerate() {
        let e = reprojection_sq(pose, k, c);
        if e <= t2 {
            idx.push(i);
            err += e;
        }
    }
    (idx, err)
}

/// Total squared reprojection error over a subset.
pub fn reprojection_error(pose: &CameraPose, k: &CameraIntrinsics, corr: &[PnpCorrespondence], subset: &[usize]) -> f64 {
    subset.iter().map(|&i| reprojection_sq(pose, k, &corr[i])).sum()
}

/// Gauss-Newton on the squared reprojection error over `subset`. A step is
/// accepted only if it lowers the error, so the result is never worse than
/// the start.
pub fn refine_pose(
    pose: &CameraPose,
    k: &CameraIntrinsics,
    corr: &[PnpCorrespondence],
    subset: &[usize],
) -> CameraPose {
    let mut pose = *pose;
    let mut err = reprojection_error(&pose, k, corr, subset);
    if !err.is_finite() {
        return pose;
    }
    for _ in 0..REFINE_MAX_ITERATIONS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for &i in subset {
            let c = &corr[i];
            let pc = pose.transform(&c.point);
            let Ok(px) = project(&pose, k, &c.point) else {
                continue;
            };
            let r = px - c.pixel;
            let jp = k.projection_jacobian(&pc);
            let mut jpose = nalgebra::Matrix2x6::<f64>::zeros();
            jpose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew(&pc)));
            jpose.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
            jtj += jpose.transpose() * jpose;
            jtr += jpose.transpose() * r;
        }
        let Some(delta) = jtj.cholesky().map(|ch| -ch.solve(&jtr)) else {
            break;
        };
        let mut step = delta;
        let mut accepted = None;
        for _ in 0..12 {
            let omega = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let candidate = pose.perturbed(&omega, &dt);
            let e = reprojection_error(&candidate, k, corr, subset);
            if e < err {
                accepted = Some((candidate, e));
                break;
            }
            step *= 0.5;
        }
        let Some((next, e)) = accepted else {
            break;
        };
        pose = next;
        err = e;
        if step.norm() < REFINE_STEP_TOLERANCE {
            break;
        }
    }
    pose
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 {
        return 0.0;
    }
    if w4 <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - w4).ln()).ceil()
}

/// Robust pose from 2D-3D correspondences: P3P hypotheses under adaptive
/// RANSAC, then alternating Gauss-Newton refinement and inlier re-selection.
pub fn ransac_pnp(corr: &[PnpCorrespondence], k: &CameraIntrinsics, params: &RansacParams) -> Result<LocalizationResult> {
    params.validate()?;
    if corr.len() < 4 {
        return Ok(LocalizationResult::failed(LocalizationStatus::InsufficientMatches, 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = corr.len();
    let mut best: Option<(CameraPose, Vec<usize>, f64)> = None;
    let mut iterations = 0;
    let mut needed = f64::INFINITY;
    while iterations < params.max_iterations && (iterations as f64) < needed {
        iterations += 1;
        let picked = index::sample(&mut rng, n, 4);
        let sample: [PnpCorrespondence; 4] = std::array::from_fn(|i| corr[picked.index(i)]);
        let Ok(solution) = minimal_candidates(&sample, k) else {
            continue;
        };
        let pose = *solution.pose();
        let (inliers, err) = inliers_of(&pose, k, corr, params.inlier_threshold_px);
        let better = match &best {
            None => !inliers.is_empty(),
            Some((_, b, be)) => inliers.len() > b.len() || (inliers.len() == b.len() && err < *be),
        };
        if better {
            needed = required_iterations(inliers.len() as f64 / n as f64, params.confidence);
            best = Some((pose, inliers, err));
        }
    }
    let Some((pose, inliers, _)) = best else {
        return Ok(LocalizationResult::failed(LocalizationStatus::RansacFailed, iterations));
    };
    if inliers.len() < params.min_inliers {
        return Ok(LocalizationResult::failed(LocalizationStatus::RansacFailed, iterations));
    }

    let mut start = pose;
    if inliers.len() >= 6 {
        if let Ok(linear) = dlt_pose(&inliers.iter().map(|&i| corr[i]).collect::<Vec<_>>(), k) {
            if reprojection_error(&linear, k, corr, &inliers) < reprojection_error(&start, k, corr, &inliers) {
                start = linear;
            }
        }
    }
    let mut pose = refine_pose(&start, k, corr, &inliers);
    let mut inliers = inliers;
    for _ in 0..10 {
        let (next, _) = inliers_of(&pose, k, corr, params.inlier_threshold_px);
        if next == inliers || next.len() < params.min_inliers {
            break;
        }
        inliers = next;
        pose = refine_pose(&pose, k, corr, &inliers);
    }
    Ok(LocalizationResult {
        pose: Some(pose),
        inliers,
        iterations_used: iterations,
        status: LocalizationStatus::Ok,
    })
}
