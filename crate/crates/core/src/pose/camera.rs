use nalgebra::{Matrix2x3, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole intrinsics with optional two-term radial distortion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::with_distortion(fx, fy, cx, cy, 0.0, 0.0)
    }

    pub fn with_distortion(fx: f64, fy: f64, cx: f64, cy: f64, k1: f64, k2: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || ![fx, fy, cx, cy, k1, k2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy} k1={k1} k2={k2}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, k1, k2 })
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0
    }

    fn distortion_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Normalized image coordinates to pixels.
    pub fn normalized_to_pixel(&self, xn: Vector2<f64>) -> Vector2<f64> {
        let g = self.distortion_factor(xn.norm_squared());
        Vector2::new(self.fx * xn.x * g + self.cx, self.fy * xn.y * g + self.cy)
    }

    /// Pixels to undistorted normalized coordinates (fixed-point inversion of
    /// the radial model).
    pub fn pixel_to_normalized(&self, px: Vector2<f64>) -> Vector2<f64> {
        let xd = Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy);
        if !self.has_distortion() {
            return xd;
        }
        let mut xn = xd;
        for _ in 0..50 {
            let next = xd / self.distortion_factor(xn.norm_squared());
            let done = (next - xn).norm() < 1e-15;
            xn = next;
            if done {
                break;
            }
        }
        xn
    }

    /// Jacobian of the pixel coordinates with respect to a camera-frame point.
    pub(crate) fn projection_jacobian(&self, pc: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / pc.z;
        let (xn, yn) = (pc.x * iz, pc.y * iz);
        let dn = Matrix2x3::new(iz, 0.0, -xn * iz, 0.0, iz, -yn * iz);
        let r2 = xn * xn + yn * yn;
        let g = self.distortion_factor(r2);
        let dg = 2.0 * (self.k1 + 2.0 * self.k2 * r2);
        let (dg_dx, dg_dy) = (dg * xn, dg * yn);
        let dd = nalgebra::Matrix2::new(
            self.fx * (g + xn * dg_dx),
            self.fx * xn * dg_dy,
            self.fy * yn * dg_dx,
            self.fy * (g + yn * dg_dy),
        );
        dd * dn
    }
}

/// World-to-camera rigid transform: `x_cam = R * x_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    /// Accepts a rotation orthonormal to within 1e-9 with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9) || !((det - 1.0).abs() <= 1e-9) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "not a proper rotation (orthogonality error {ortho:e}, det {det})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub(crate) fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    /// From a unit quaternion given as `(w, x, y, z)`; the quaternion is normalized.
    pub fn from_quaternion(wxyz: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if !(q.norm() > 0.0) || !q.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("quaternion must be finite and nonzero".into()));
        }
        let unit = UnitQuaternion::from_quaternion(q);
        Self::new(unit.to_rotation_matrix().into_inner(), translation)
    }

    /// Rotation as `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        let c = q.quaternion().coords;
        let (x, y, z, w) = (c[0], c[1], c[2], c[3]);
        if w < 0.0 {
            [-w, -x, -y, -z]
        } else {
            [w, x, y, z]
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Applies a camera-frame perturbation: `x' = exp(omega) x + dt`.
    pub(crate) fn perturbed(&self, omega: &Vector3<f64>, dt: &Vector3<f64>) -> Self {
        let r = Rotation3::new(*omega);
        let rotation = r * Rotation3::from_matrix_unchecked(self.rotation);
        // Re-orthonormalize to keep the invariant over many updates.
        let rotation = Rotation3::from_matrix_eps(rotation.matrix(), 1e-15, 10, rotation);
        Self {
            rotation: rotation.into_inner(),
            translation: r * self.translation + dt,
        }
    }
}

/// Projects a world point to pixels.
pub fn project(pose: &CameraPose, intrinsics: &CameraIntrinsics, point: &Vector3<f64>) -> Result<Vector2<f64>> {
    let pc = pose.transform(point);
    if !(pc.z > 0.0) {
        return Err(Error::InvalidInput(format!("point has nonpositive depth {}", pc.z)));
    }
    Ok(intrinsics.normalized_to_pixel(Vector2::new(pc.x / pc.z, pc.y / pc.z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3x4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_cases() {
        let k = CameraIntrinsics::pinhole(100.0, 100.0, 0.0, 0.0).unwrap();
        let id = CameraPose::identity();
        assert_eq!(project(&id, &k, &Vector3::new(0.0, 0.0, 1.0)).unwrap(), Vector2::new(0.0, 0.0));
        assert_eq!(project(&id, &k, &Vector3::new(0.5, 0.0, 1.0)).unwrap(), Vector2::new(50.0, 0.0));
        assert!(project(&id, &k, &Vector3::new(0.0, 0.0, -1.0)).is_err());
        assert!(project(&id, &k, &Vector3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn projection_matches_homogeneous_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = CameraIntrinsics::pinhole(520.0, 515.0, 320.0, 240.0).unwrap();
        for _ in 0..20 {
            let axis = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let pose = CameraPose::from_rotation(Rotation3::new(axis), Vector3::new(0.1, -0.2, 5.0));
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let kmat = Matrix3::new(520.0, 0.0, 320.0, 0.0, 515.0, 240.0, 0.0, 0.0, 1.0);
            let mut rt = Matrix3x4::zeros();
            rt.fixed_view_mut::<3, 3>(0, 0).copy_from(pose.rotation());
            rt.set_column(3, pose.translation());
            let h = kmat * rt * Vector4::new(p.x, p.y, p.z, 1.0);
            let oracle = Vector2::new(h.x / h.z, h.y / h.z);
            assert!((project(&pose, &k, &p).unwrap() - oracle).norm() < 1e-9);
        }
    }

    #[test]
    fn undistortion_inverts_distortion() {
        let k = CameraIntrinsics::with_distortion(600.0, 600.0, 320.0, 240.0, -0.2, 0.05).unwrap();
        let xn = Vector2::new(0.3, -0.2);
        let px = k.normalized_to_pixel(xn);
        assert!((k.pixel_to_normalized(px) - xn).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let k = CameraIntrinsics::with_distortion(600.0, 580.0, 320.0, 240.0, -0.1, 0.02).unwrap();
        let pc = Vector3::new(0.4, -0.3, 2.5);
        let f = |p: &Vector3<f64>| k.normalized_to_pixel(Vector2::new(p.x / p.z, p.y / p.z));
        let jac = k.projection_jacobian(&pc);
        let h = 1e-6;
        for c in 0..3 {
            let mut plus = pc;
            let mut minus = pc;
            plus[c] += h;
            minus[c] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((jac.column(c) - fd).norm() < 1e-5);
        }
    }

    #[test]
    fn pose_validation_and_quaternions() {
        assert!(CameraPose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraPose::new(reflect, Vector3::zeros()).is_err());
        let pose = CameraPose::from_rotation(Rotation3::new(Vector3::new(0.3, -0.1, 2.0)), Vector3::new(1.0, 2.0, 3.0));
        let q = pose.quaternion();
        let back = CameraPose::from_quaternion(q, *pose.translation()).unwrap();
        assert!((back.rotation() - pose.rotation()).norm() < 1e-12);
        assert!(CameraPose::from_quaternion([0.0; 4], Vector3::zeros()).is_err());
        let c = pose.center();
        assert!(pose.transform(&c).norm() < 1e-12);
        assert!(CameraIntrinsics::pinhole(0.0, 1.0, 0.0, 0.0).is_err());
    }
}
