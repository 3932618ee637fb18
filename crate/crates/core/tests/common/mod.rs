#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `v + N(0, sigma^2)` per element, renormalized.
pub fn perturbed(rng: &mut ChaCha8Rng, v: &[f64], sigma: f64) -> Vec<f64> {
    let w: Vec<f64> = v
        .iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(rng);
            x + sigma * z
        })
        .collect();
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.into_iter().map(|x| x / n).collect()
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// L2 distance restricted to dimensions whose signs (>= 0 vs < 0) differ.
pub fn weighted_hamming(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| (**x >= 0.0) != (**y >= 0.0))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Index of the nearest database row, lowest index on ties.
pub fn brute_nn(db: &[Vec<f64>], q: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, d) in db.iter().enumerate() {
        let dist = l2(d, q);
        if dist < best.0 {
            best = (dist, i);
        }
    }
    best.1
}

/// Row-major pairs: `n` anchors and `n` positives of dimension `d`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub n: usize,
    pub d: usize,
    pub a: Vec<f64>,
    pub p: Vec<f64>,
}

impl Batch {
    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    pub fn positive(&self, i: usize) -> &[f64] {
        &self.p[i * self.d..(i + 1) * self.d]
    }
}

fn away_from_zero(rng: &mut ChaCha8Rng, center: f64, spread: f64) -> f64 {
    loop {
        let v = center + rng.random_range(-spread..spread);
        if v.abs() >= 1e-2 {
            return v;
        }
    }
}

/// Random batch with N in 2..=16, D in 4..=32 and every value at least 1e-2
/// from zero. Positives are noisy copies of their anchors.
pub fn random_batch(rng: &mut ChaCha8Rng) -> Batch {
    let n = rng.random_range(2..=16);
    let d = rng.random_range(4..=32);
    let scale = 1.0 / (d as f64).sqrt();
    let a: Vec<f64> = (0..n * d).map(|_| away_from_zero(rng, 0.0, 2.0 * scale)).collect();
    let p: Vec<f64> = a.iter().map(|&x| away_from_zero(rng, x, scale)).collect();
    Batch { n, d, a, p }
}

/// Hardest-negative triplet margin loss, margin 1.
pub fn triplet_oracle(b: &Batch, dist: fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    for i in 0..b.n {
        let pos = dist(b.anchor(i), b.positive(i));
        let neg = (0..b.n)
            .filter(|&j| j != i)
            .flat_map(|j| [dist(b.anchor(i), b.positive(j)), dist(b.positive(i), b.anchor(j))])
            .fold(f64::INFINITY, f64::min);
        total += (1.0 + pos - neg).max(0.0);
    }
    total / b.n as f64
}

/// The `k` nearest anchors of every anchor, lowest index on ties.
pub fn sos_neighbors(b: &Batch, k: usize) -> Vec<Vec<usize>> {
    (0..b.n)
        .map(|i| {
            let mut others: Vec<usize> = (0..b.n).filter(|&j| j != i).collect();
            others.sort_by(|&x, &y| {
                l2(b.anchor(i), b.anchor(x))
                    .total_cmp(&l2(b.anchor(i), b.anchor(y)))
                    .then(x.cmp(&y))
            });
            others.truncate(k);
            others
        })
        .collect()
}

/// Second-order similarity over fixed neighbor lists.
pub fn sos_with(b: &Batch, neighbors: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for (i, list) in neighbors.iter().enumerate() {
        let s: f64 = list
            .iter()
            .map(|&j| {
                let diff = l2(b.anchor(i), b.anchor(j)) - l2(b.positive(i), b.positive(j));
                diff * diff
            })
            .sum();
        total += s.sqrt();
    }
    total / b.n as f64
}

/// Second-order similarity over the `k` nearest anchors of each anchor.
pub fn sos_oracle(b: &Batch, k: usize) -> f64 {
    sos_with(b, &sos_neighbors(b, k))
}

/// Central differences of `f` over every anchor and positive element.
pub fn fd_gradient(b: &Batch, h: f64, f: impl Fn(&Batch) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut work = b.clone();
    let mut ga = vec![0.0; b.a.len()];
    let mut gp = vec![0.0; b.p.len()];
    for k in 0..b.a.len() {
        let x = work.a[k];
        work.a[k] = x + h;
        let up = f(&work);
        work.a[k] = x - h;
        let down = f(&work);
        work.a[k] = x;
        ga[k] = (up - down) / (2.0 * h);
    }
    for k in 0..b.p.len() {
        let x = work.p[k];
        work.p[k] = x + h;
        let up = f(&work);
        work.p[k] = x - h;
        let down = f(&work);
        work.p[k] = x;
        gp[k] = (up - down) / (2.0 * h);
    }
    (ga, gp)
}

/// `|x - y| / max(|x|, |y|)` over the concatenated vectors; 0 when both vanish.
pub fn relative_error(x: &[f64], y: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let scale = norm(x).max(norm(y));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub struct PnpScene {
    pub rotation: nalgebra::Rotation3<f64>,
    pub translation: nalgebra::Vector3<f64>,
    pub intrinsics: parloc::pose::CameraIntrinsics,
    pub correspondences: Vec<parloc::pose::PnpCorrespondence>,
    /// Number of leading correspondences that are true projections.
    pub inliers: usize,
}

/// Random world-to-camera pose. Every point sits 4 to 10 m deep behind a
/// uniformly drawn pixel of the 640x480 image. Inliers carry `pixel_noise` px
/// Gaussian noise; outliers get an independent uniform pixel.
pub fn pnp_scene(rng: &mut ChaCha8Rng, inliers: usize, outliers: usize, pixel_noise: f64) -> PnpScene {
    use nalgebra::{Rotation3, Vector2, Vector3};
    let (fx, fy, cx, cy) = (600.0, 600.0, 320.0, 240.0);
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let rotation = Rotation3::new(axis.normalize() * rng.random_range(0.0..std::f64::consts::PI));
    let translation = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut correspondences = Vec::new();
    for i in 0..inliers + outliers {
        let (u, v, z) = (rng.random_range(0.0..640.0), rng.random_range(0.0..480.0), rng.random_range(4.0..10.0));
        let pc = Vector3::new((u - cx) / fx * z, (v - cy) / fy * z, z);
        let point = rotation.inverse() * (pc - translation);
        let pixel = if i < inliers {
            let (nx, ny): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            Vector2::new(
                fx * pc.x / pc.z + cx + pixel_noise * nx,
                fy * pc.y / pc.z + cy + pixel_noise * ny,
            )
        } else {
            Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))
        };
        correspondences.push(parloc::pose::PnpCorrespondence { pixel, point });
    }
    PnpScene {
        rotation,
        translation,
        intrinsics: parloc::pose::CameraIntrinsics::pinhole(fx, fy, cx, cy).unwrap(),
        correspondences,
        inliers,
    }
}

/// Camera-center distance (m) and relative rotation angle (degrees).
pub fn pose_gap(
    est: &parloc::pose::CameraPose,
    rotation: &nalgebra::Rotation3<f64>,
    translation: &nalgebra::Vector3<f64>,
) -> (f64, f64) {
    let r_est = nalgebra::Rotation3::from_matrix(est.rotation());
    let c_est = -(r_est.inverse() * est.translation());
    let c_true = -(rotation.inverse() * translation);
    // ||D - I||_F = sqrt(8) sin(theta / 2), well conditioned near zero
    let d = r_est * rotation.inverse();
    let frob = (d.matrix() - nalgebra::Matrix3::identity()).norm();
    let angle = (2.0 * (frob / 8f64.sqrt()).min(1.0).asin()).to_degrees();
    ((c_est - c_true).norm(), angle)
}
