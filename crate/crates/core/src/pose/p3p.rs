//! Minimal and linear absolute-pose solvers.
//!
//! The minimal solver follows Grunert's three-point formulation: the depth
//! ratios along the three bearing rays satisfy a quartic, each real root
//! gives a triangle in the camera frame, and the rigid transform to the world
//! triangle is recovered with an SVD alignment. A fourth correspondence
//! selects among the (at most four) candidates.

use nalgebra::{DMatrix, Matrix3, SMatrix, SymmetricEigen, Vector2, Vector3};

use super::camera::{project, CameraIntrinsics, CameraPose};
use super::ransac::refine_pose;
use crate::error::{Error, Result};

/// One 2D-3D correspondence in pixels and world meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpCorrespondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

/// Candidate poses of a minimal solve and the index of the one that best
/// reprojects the disambiguating correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimalSolution {
    pub candidates: Vec<CameraPose>,
    pub best: usize,
}

impl MinimalSolution {
    pub fn pose(&self) -> &CameraPose {
        &self.candidates[self.best]
    }
}

/// Real roots of a polynomial given highest degree first.
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let lead = coeffs
        .iter()
        .position(|c| c.abs() > 1e-12 * scale)
        .unwrap_or(coeffs.len());
    let c = &coeffs[lead..];
    let degree = c.len().saturating_sub(1);
    if degree == 0 {
        return Vec::new();
    }
    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for j in 0..degree {
        companion[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    let eval = |x: f64| c.iter().fold(0.0, |acc, &k| acc * x + k);
    let deriv = |x: f64| {
        c[..degree]
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, &k)| acc * x + k * (degree - i) as f64)
    };
    let mut roots: Vec<f64> = companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let d = deriv(x);
                if d == 0.0 {
                    break;
                }
                let step = eval(x) / d;
                x -= step;
                if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .filter(|x| x.is_finite())
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    roots
}

/// Rotation and translation with `cam_i = R world_i + t`, least squares over
/// the given pairs (Kabsch alignment).
pub(crate) fn align_points(world: &[Vector3<f64>], cam: &[Vector3<f64>]) -> Option<CameraPose> {
    let n = world.len() as f64;
    let cw = world.iter().sum::<Vector3<f64>>() / n;
    let cc = cam.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (c - cc) * (w - cw).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let t = cc - r * cw;
    let r = nalgebra::Rotation3::from_matrix_eps(&r, 1e-15, 20, nalgebra::Rotation3::identity());
    let pose = CameraPose::from_rotation(r, t);
    pose.translation().iter().all(|v| v.is_finite()).then_some(pose)
}

fn is_degenerate(points: &[Vector3<f64>; 3]) -> bool {
    let e1 = points[1] - points[0];
    let e2 = points[2] - points[0];
    let scale = e1.norm_squared().max(e2.norm_squared()).max((points[2] - points[1]).norm_squared());
    scale == 0.0 || e1.cross(&e2).norm() <= 1e-10 * scale
}

/// All P3P poses for three bearing vectors (any length) and world points.
pub fn p3p(bearings: &[Vector3<f64>; 3], points: &[Vector3<f64>; 3]) -> Result<Vec<CameraPose>> {
    if is_degenerate(points) {
        return Err(Error::Degenerate("collinear or coincident 3D points"));
    }
    let j: Vec<Vector3<f64>> = bearings.iter().map(|b| b.normalize()).collect();
    if j.iter().any(|b| !b.iter().all(|v| v.is_finite())) {
        return Err(Error::Degenerate("invalid bearing vector"));
    }
    let (p1, p2, p3) = (points[0], points[1], points[2]);
    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    let cos_a = j[1].dot(&j[2]);
    let cos_b = j[0].dot(&j[2]);
    let cos_g = j[0].dot(&j[1]);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let coeffs = [
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * cos_a * cos_a,
        4.0 * (amc * (1.0 - amc) * cos_b - (1.0 - apc) * cos_a * cos_g + 2.0 * c2 / b2 * cos_a * cos_a * cos_b),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cos_b * cos_b + 2.0 * bmc * cos_a * cos_a
            - 4.0 * apc * cos_a * cos_b * cos_g
            + 2.0 * bma * cos_g * cos_g),
        4.0 * (-amc * (1.0 + amc) * cos_b + 2.0 * a2 / b2 * cos_g * cos_g * cos_b - (1.0 - apc) * cos_a * cos_g),
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cos_g * cos_g,
    ];

    let mut poses = Vec::with_capacity(4);
    for v in real_roots(&coeffs) {
        if v <= 0.0 {
            continue;
        }
        let denom = 2.0 * (cos_g - v * cos_a);
        if denom.abs() < 1e-14 {
            continue;
        }
        let u = ((amc - 1.0) * v * v - 2.0 * amc * cos_b * v + 1.0 + amc) / denom;
        if u <= 0.0 {
            continue;
        }
        let s1_sq = b2 / (1.0 + v * v - 2.0 * v * cos_b);
        if !(s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let depths = refine_depths(Vector3::new(s1, u * s1, v * s1), [a2, b2, c2], [cos_a, cos_b, cos_g]);
        let cam: Vec<Vector3<f64>> = (0..3).map(|i| j[i] * depths[i]).collect();
        if let Some(pose) = align_points(points, &cam) {
            poses.push(pose);
        }
        if poses.len() == 4 {
            break;
        }
    }
    Ok(poses)
}

/// Newton polish of the three law-of-cosines constraints on the ray depths.
fn refine_depths(s: Vector3<f64>, [a2, b2, c2]: [f64; 3], [ca, cb, cg]: [f64; 3]) -> Vector3<f64> {
    let residual = |s: &Vector3<f64>| {
        Vector3::new(
            s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * ca - a2,
            s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * cb - b2,
            s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * cg - c2,
        )
    };
    let mut s = s;
    let mut r = residual(&s);
    for _ in 0..5 {
        let jac = Matrix3::new(
            0.0,
            2.0 * s[1] - 2.0 * s[2] * ca,
            2.0 * s[2] - 2.0 * s[1] * ca,
            2.0 * s[0] - 2.0 * s[2] * cb,
            0.0,
            2.0 * s[2] - 2.0 * s[0] * cb,
            2.0 * s[0] - 2.0 * s[1] * cg,
            2.0 * s[1] - 2.0 * s[0] * cg,
            0.0,
        );
        let Some(step) = jac.lu().solve(&r) else {
            break;
        };
        let next = s - step;
        let rn = residual(&next);
        if rn.norm() >= r.norm() {
            break;
        }
        s = next;
        r = rn;
    }
    s
}

/// P3P on the first three correspondences; the fourth picks the candidate
/// with the smallest reprojection error. The chosen pose is then polished by
/// Gauss-Newton over all four points, which matters when the three-point
/// configuration is close to a double root of the quartic.
pub fn minimal_pnp(sample: &[PnpCorrespondence; 4], intrinsics: &CameraIntrinsics) -> Result<MinimalSolution> {
    let mut solution = minimal_candidates(sample, intrinsics)?;
    let polished = refine_pose(solution.pose(), intrinsics, sample, &[0, 1, 2, 3]);
    solution.candidates[solution.best] = polished;
    Ok(solution)
}

pub(crate) fn minimal_candidates(
    sample: &[PnpCorrespondence; 4],
    intrinsics: &CameraIntrinsics,
) -> Result<MinimalSolution> {
    let bearings: [Vector3<f64>; 3] = std::array::from_fn(|i| {
        let xn = intrinsics.pixel_to_normalized(sample[i].pixel);
        Vector3::new(xn.x, xn.y, 1.0)
    });
    let points = [sample[0].point, sample[1].point, sample[2].point];
    let candidates = p3p(&bearings, &points)?;
    if candidates.is_empty() {
        return Err(Error::Degenerate("no real P3P solution"));
    }
    let check = &sample[3];
    let best = candidates
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let err = project(pose, intrinsics, &check.point)
                .map(|px| (px - check.pixel).norm())
                .unwrap_or(f64::INFINITY);
            (err, i)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
        .unwrap_or(0);
    Ok(MinimalSolution { candidates, best })
}

/// Linear pose from six or more correspondences (normalized DLT followed by
/// projection onto the rotation group).
pub fn dlt_pose(correspondences: &[PnpCorrespondence], intrinsics: &CameraIntrinsics) -> Result<CameraPose> {
    let n = correspondences.len();
    if n < 6 {
        return Err(Error::InvalidInput(format!("DLT needs at least 6 correspondences, got {n}")));
    }
    let centroid = correspondences.iter().map(|c| c.point).sum::<Vector3<f64>>() / n as f64;
    let spread = correspondences.iter().map(|c| (c.point - centroid).norm()).sum::<f64>() / n as f64;
    if !(spread > 0.0) {
        return Err(Error::Degenerate("coincident 3D points"));
    }
    let mut ata = SMatrix::<f64, 12, 12>::zeros();
    for c in correspondences {
        let x = (c.point - centroid) / spread;
        let xn = intrinsics.pixel_to_normalized(c.pixel);
        let mut r1 = SMatrix::<f64, 1, 12>::zeros();
        let mut r2 = SMatrix::<f64, 1, 12>::zeros();
        for k in 0..3 {
            r1[k] = x[k];
            r2[4 + k] = x[k];
            r1[8 + k] = -xn.x * x[k];
            r2[8 + k] = -xn.y * x[k];
        }
        r1[3] = 1.0;
        r2[7] = 1.0;
        r1[11] = -xn.x;
        r2[11] = -xn.y;
        ata += r1.transpose() * r1 + r2.transpose() * r2;
    }
    let eig = SymmetricEigen::new(ata);
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::Degenerate("DLT eigen solve failed"))?;
    let p = eig.eigenvectors.column(min_idx);
    let mut pm = nalgebra::Matrix3x4::from_fn(|r, c| p[r * 4 + c]);
    // Undo the world normalization: x ~ M (X - c)/s + p4.
    let m = pm.fixed_view::<3, 3>(0, 0) / spread;
    let p4 = pm.column(3) - m * centroid;
    pm.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    pm.set_column(3, &p4);

    let mut m = pm.fixed_view::<3, 3>(0, 0).into_owned();
    let mut p4 = pm.column(3).into_owned();
    if m.determinant() < 0.0 {
        m = -m;
        p4 = -p4;
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let scale = svd.singular_values.mean();
    if !(scale > 0.0) {
        return Err(Error::Degenerate("DLT produced a singular camera matrix"));
    }
    let r = u * v_t;
    let r = nalgebra::Rotation3::from_matrix_eps(&r, 1e-15, 20, nalgebra::Rotation3::identity());
    let pose = CameraPose::from_rotation(r, p4 / scale);
    let in_front = correspondences.iter().filter(|c| pose.transform(&c.point).z > 0.0).count();
    if in_front * 2 < n {
        return Err(Error::Degenerate("DLT solution places points behind the camera"));
    }
    Ok(pose)
}
