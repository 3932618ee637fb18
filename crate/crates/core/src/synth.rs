//! Seeded synthetic fixtures: localization scenes with controllable local and
//! global descriptor quality, maps with perturbed duplicate descriptors, and
//! a rendered textured-plane scene for patch-extraction experiments.

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::descriptor::{GlobalDescriptor, RealDescriptor};
use crate::error::Result;
use crate::ingest::{GrayImage, ImageObservations, PoseRecord, QueryImage, QuerySet, SweepInput};
use crate::map::{FrameId, FrameRecord, KeypointGeometry, LandmarkId, LandmarkRecord, MapDatabase, QueryKeypoint};
use crate::pose::{project, CameraIntrinsics, CameraPose};

/// A random point on the unit sphere.
pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `v + N(0, sigma^2)` per element, renormalized.
pub fn perturb_unit(rng: &mut impl Rng, v: &[f64], sigma: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = v
            .iter()
            .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return w.into_iter().map(|x| x / n).collect();
        }
    }
}

/// How a query's descriptors relate to the map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryKind {
    /// Mild local noise, global descriptor from the true place.
    Normal,
    /// Strong local noise; only a small candidate set keeps matches distinctive.
    HeavyLocal,
    /// Mild local noise, but the global descriptor looks like another place.
    AmbiguousGlobal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub places: usize,
    pub frames_per_place: usize,
    pub landmarks_per_place: usize,
    pub local_dim: usize,
    pub global_dim: usize,
    pub keypoints_per_query: usize,
    pub outliers_per_query: usize,
    pub local_noise: f64,
    pub heavy_local_noise: f64,
    pub global_noise: f64,
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            places: 20,
            frames_per_place: 20,
            landmarks_per_place: 100,
            local_dim: 256,
            global_dim: 64,
            keypoints_per_query: 40,
            outliers_per_query: 10,
            local_noise: 0.01,
            heavy_local_noise: 0.08,
            global_noise: 0.02,
            pixel_noise: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub map: MapDatabase,
    pub queries: QuerySet,
    pub ground_truth: Vec<(u64, PoseRecord)>,
    pub kinds: Vec<QueryKind>,
}

pub const SCENE_WIDTH: f64 = 640.0;
pub const SCENE_HEIGHT: f64 = 480.0;

fn scene_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0).expect("valid intrinsics")
}

fn small_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation3<f64> {
    let axis = Vector3::from_iterator(random_unit(rng, 3));
    Rotation3::new(axis * rng.random_range(0.0..max_angle))
}

/// Places spaced along the x axis, each a cluster of landmarks seen by its
/// own frames. Query `i` views place `i % places`.
pub fn localization_scene(params: &SceneParams, kinds: &[QueryKind]) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let p = params;
    let signatures: Vec<Vec<f64>> = (0..p.places).map(|_| random_unit(&mut rng, p.global_dim)).collect();
    let origin = |place: usize| Vector3::new(60.0 * place as f64, 0.0, 0.0);

    let mut landmarks = Vec::with_capacity(p.places * p.landmarks_per_place);
    let mut frames = Vec::with_capacity(p.places * p.frames_per_place);
    for place in 0..p.places {
        let ids: Vec<LandmarkId> = (0..p.landmarks_per_place)
            .map(|i| LandmarkId((place * p.landmarks_per_place + i) as u32))
            .collect();
        for &id in &ids {
            let pos = origin(place)
                + Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0), rng.random_range(8.0..14.0));
            let desc = RealDescriptor::new(random_unit(&mut rng, p.local_dim))?;
            landmarks.push(LandmarkRecord::new(id, pos, vec![desc]));
        }
        for f in 0..p.frames_per_place {
            let g = perturb_unit(&mut rng, &signatures[place], p.global_noise);
            frames.push(FrameRecord {
                id: FrameId((place * p.frames_per_place + f) as u32),
                global_descriptor: GlobalDescriptor::new(g)?,
                visible_landmarks: ids.iter().copied().collect(),
            });
        }
    }
    let map = MapDatabase::new(landmarks, frames)?;

    let k = scene_intrinsics();
    let pixel_noise = Normal::new(0.0, p.pixel_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut queries = Vec::with_capacity(kinds.len());
    let mut ground_truth = Vec::with_capacity(kinds.len());
    for (qi, &kind) in kinds.iter().enumerate() {
        let place = qi % p.places;
        let center = origin(place)
            + Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5));
        let rot = small_rotation(&mut rng, 0.08);
        let pose = CameraPose::from_rotation(rot, -(rot * center));

        let mut visible: Vec<&LandmarkRecord> = map.landmarks()[place * p.landmarks_per_place..][..p.landmarks_per_place]
            .iter()
            .filter(|l| {
                project(&pose, &k, &l.position)
                    .map(|px| px.x >= 0.0 && px.y >= 0.0 && px.x < SCENE_WIDTH && px.y < SCENE_HEIGHT)
                    .unwrap_or(false)
            })
            .collect();
        visible.shuffle(&mut rng);
        visible.truncate(p.keypoints_per_query);

        let noise = if kind == QueryKind::HeavyLocal {
            p.heavy_local_noise
        } else {
            p.local_noise
        };
        let mut keypoints = Vec::with_capacity(visible.len() + p.outliers_per_query);
        for l in visible {
            let px = project(&pose, &k, &l.position)?;
            let px = px + Vector2::new(pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng));
            let desc = perturb_unit(&mut rng, l.descriptors[0].real().values(), noise);
            keypoints.push(QueryKeypoint::new(random_geometry(&mut rng, px), RealDescriptor::new(desc)?)?);
        }
        for _ in 0..p.outliers_per_query {
            let px = Vector2::new(rng.random_range(0.0..SCENE_WIDTH), rng.random_range(0.0..SCENE_HEIGHT));
            let desc = RealDescriptor::new(random_unit(&mut rng, p.local_dim))?;
            keypoints.push(QueryKeypoint::new(random_geometry(&mut rng, px), desc)?);
        }
        keypoints.shuffle(&mut rng);

        let global_place = if kind == QueryKind::AmbiguousGlobal && p.places > 1 {
            (place + 1 + rng.random_range(0..p.places - 1)) % p.places
        } else {
            place
        };
        let global = GlobalDescriptor::new(perturb_unit(&mut rng, &signatures[global_place], p.global_noise))?;
        queries.push(QueryImage {
            id: qi as u64,
            global,
            keypoints,
        });
        ground_truth.push((qi as u64, PoseRecord::from_pose(&pose)));
    }
    Ok(SyntheticScene {
        map,
        queries: QuerySet {
            intrinsics: Some(k),
            queries,
        },
        ground_truth,
        kinds: kinds.to_vec(),
    })
}

fn random_geometry(rng: &mut impl Rng, px: Vector2<f64>) -> KeypointGeometry {
    KeypointGeometry {
        pixel: [px.x, px.y],
        orientation: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        scale: rng.random_range(1.5..4.0),
    }
}

/// Two-mode benchmark: `per_kind` queries whose local descriptors are heavily
/// perturbed, followed by `per_kind` queries whose global descriptor points
/// at the wrong place.
pub fn fusion_benchmark(per_kind: usize, seed: u64) -> Result<SyntheticScene> {
    let kinds: Vec<QueryKind> = std::iter::repeat_n(QueryKind::HeavyLocal, per_kind)
        .chain(std::iter::repeat_n(QueryKind::AmbiguousGlobal, per_kind))
        .collect();
    localization_scene(
        &SceneParams {
            seed,
            landmarks_per_place: 200,
            keypoints_per_query: 25,
            heavy_local_noise: 0.1,
            ..Default::default()
        },
        &kinds,
    )
}

/// Map in which every landmark holds two unit descriptors `p` and `q` whose
/// difference `p - q` is exactly a draw from `N(mu, sigma^2)` per element.
///
/// For a draw `delta`, `q` is chosen on the unit sphere with
/// `q . delta = -|delta|^2 / 2`, which makes `p = q + delta` unit as well.
pub fn duplicate_descriptor_map(landmarks: usize, dim: usize, mu: f64, sigma: f64, seed: u64) -> Result<MapDatabase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mu, sigma).map_err(|e| crate::Error::Config(e.to_string()))?;
    let mut records = Vec::with_capacity(landmarks);
    let mut i = 0u32;
    while records.len() < landmarks {
        let delta: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let dn = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(dn > 0.0 && dn < 2.0) {
            continue;
        }
        // unit u orthogonal to delta
        let mut u = random_unit(&mut rng, dim);
        let proj: f64 = u.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>() / (dn * dn);
        u.iter_mut().zip(&delta).for_each(|(a, b)| *a -= proj * b);
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let along = -dn / 2.0;
        let across = (1.0 - dn * dn / 4.0).sqrt();
        let q: Vec<f64> = delta
            .iter()
            .zip(&u)
            .map(|(d, u)| along * d / dn + across * u / un)
            .collect();
        let p: Vec<f64> = q.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let pos = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(5.0..15.0));
        records.push(LandmarkRecord::new(LandmarkId(i), pos, vec![RealDescriptor::new(p)?, RealDescriptor::new(q)?]));
        i += 1;
    }
    let frame = FrameRecord {
        id: FrameId(0),
        global_descriptor: GlobalDescriptor::new(random_unit(&mut rng, 16))?,
        visible_landmarks: records.iter().map(|l| l.id).collect(),
    };
    MapDatabase::new(records, vec![frame])
}

/// One rendered view of the textured plane with its keypoints.
#[derive(Clone, Debug)]
pub struct PlaneView {
    pub id: u64,
    pub pose: CameraPose,
    pub image: GrayImage,
    pub keypoints: Vec<(LandmarkId, KeypointGeometry)>,
}

/// A textured ground plane photographed from above by database and query cameras.
#[derive(Clone, Debug)]
pub struct PlaneScene {
    pub intrinsics: CameraIntrinsics,
    pub landmarks: Vec<(LandmarkId, Vector3<f64>)>,
    pub database: Vec<PlaneView>,
    pub queries: Vec<PlaneView>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSceneParams {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub height_m: f64,
    pub landmarks: usize,
    pub database_views: usize,
    pub query_views: usize,
    /// World radius that a keypoint's scale corresponds to.
    pub keypoint_radius_m: f64,
    pub image_noise: f64,
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for PlaneSceneParams {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            focal: 300.0,
            height_m: 2.0,
            landmarks: 120,
            database_views: 6,
            query_views: 20,
            keypoint_radius_m: 0.02,
            image_noise: 0.02,
            pixel_noise: 0.2,
            seed: 0,
        }
    }
}

/// Smooth value noise: random lattice values blended with a smoothstep.
struct ValueNoise {
    size: usize,
    spacing: f64,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng, spacing: f64, extent: f64) -> Self {
        let size = (extent / spacing).ceil() as usize + 2;
        Self {
            size,
            spacing,
            values: (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn at(&self, x: f64, y: f64, offset: f64) -> f64 {
        let gx = ((x + offset) / self.spacing).max(0.0);
        let gy = ((y + offset) / self.spacing).max(0.0);
        let (ix, iy) = ((gx as usize).min(self.size - 2), (gy as usize).min(self.size - 2));
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (s((gx - ix as f64).min(1.0)), s((gy - iy as f64).min(1.0)));
        let v = |i: usize, j: usize| self.values[j * self.size + i];
        let top = v(ix, iy) * (1.0 - fx) + v(ix + 1, iy) * fx;
        let bottom = v(ix, iy + 1) * (1.0 - fx) + v(ix + 1, iy + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

impl PlaneScene {
    pub fn sweep_input(&self) -> SweepInput {
        let observations = |views: &[PlaneView]| {
            views
                .iter()
                .map(|v| ImageObservations {
                    id: v.id,
                    image: v.image.clone(),
                    keypoints: v.keypoints.clone(),
                })
                .collect()
        };
        SweepInput {
            intrinsics: self.intrinsics,
            landmarks: self.landmarks.clone(),
            database: observations(&self.database),
            queries: observations(&self.queries),
        }
    }
}

pub fn plane_scene(params: &PlaneSceneParams) -> Result<PlaneScene> {
    let p = params;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let intrinsics = CameraIntrinsics::pinhole(p.focal, p.focal, p.width as f64 / 2.0, p.height as f64 / 2.0)?;
    let half_w = p.width as f64 / 2.0 * p.height_m / p.focal;
    let half_h = p.height as f64 / 2.0 * p.height_m / p.focal;
    let (ex, ey) = (half_w + 0.6, half_h + 0.6);
    let extent = 2.0 * ex.max(ey) + 2.0;
    let octaves = [(0.40, 0.5), (0.20, 0.3), (0.10, 0.2)];
    let noise: Vec<(ValueNoise, f64)> = octaves
        .iter()
        .map(|&(spacing, amp)| (ValueNoise::new(&mut rng, spacing, extent), amp))
        .collect();
    let offset = extent / 2.0;
    let texture = |x: f64, y: f64| 0.5 + noise.iter().map(|(n, a)| a * n.at(x, y, offset)).sum::<f64>() * 0.5;

    let landmarks: Vec<(LandmarkId, Vector3<f64>)> = (0..p.landmarks)
        .map(|i| {
            (
                LandmarkId(i as u32),
                Vector3::new(rng.random_range(-ex..ex), rng.random_range(-ey..ey), 0.0),
            )
        })
        .collect();

    // camera looking straight down the -Z axis
    let down = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
    let image_noise = Normal::new(0.0, p.image_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let pixel_noise = Normal::new(0.0, p.pixel_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let view = |rng: &mut ChaCha8Rng, id: u64, spread: f64| -> Result<PlaneView> {
        let center = Vector3::new(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            p.height_m + rng.random_range(-0.1..0.1),
        );
        let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(-0.5..0.5));
        let tilt = small_rotation(rng, 0.05);
        let rot = tilt * yaw * down;
        let pose = CameraPose::from_rotation(rot, -(rot * center));
        let r_t = pose.rotation().transpose();
        let cam_center = pose.center();
        let k = &intrinsics;
        let image = GrayImage::from_fn(p.width, p.height, |x, y| {
            let ray = r_t * Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let s = -cam_center.z / ray.z;
            let hit = cam_center + ray * s;
            texture(hit.x, hit.y) + image_noise.sample(rng)
        })?;
        let mut keypoints = Vec::new();
        for (id, pos) in &landmarks {
            let Ok(px) = project(&pose, k, pos) else {
                continue;
            };
            if !(px.x >= 0.0 && px.y >= 0.0 && px.x <= (p.width - 1) as f64 && px.y <= (p.height - 1) as f64) {
                continue;
            }
            let ahead = project(&pose, k, &(pos + Vector3::new(0.01, 0.0, 0.0)))?;
            let dir = ahead - px;
            let depth = pose.transform(pos).z;
            let noisy = px + Vector2::new(pixel_noise.sample(rng), pixel_noise.sample(rng));
            keypoints.push((
                *id,
                KeypointGeometry {
                    pixel: [noisy.x, noisy.y],
                    orientation: dir.y.atan2(dir.x),
                    scale: p.focal * p.keypoint_radius_m / depth,
                },
            ));
        }
        Ok(PlaneView {
            id,
            pose,
            image,
            keypoints,
        })
    };
    let database = (0..p.database_views)
        .map(|i| view(&mut rng, i as u64, 0.5))
        .collect::<Result<Vec<_>>>()?;
    let queries = (0..p.query_views)
        .map(|i| view(&mut rng, i as u64, 0.4))
        .collect::<Result<Vec<_>>>()?;
    Ok(PlaneScene {
        intrinsics,
        landmarks,
        database,
        queries,
    })
}

/// Plane scene used for the patch-coefficient sweep: sparse enough that
/// registration depends on how much texture each patch captures.
pub fn sweep_fixture(seed: u64) -> Result<PlaneScene> {
    plane_scene(&PlaneSceneParams {
        landmarks: 80,
        image_noise: 0.06,
        seed,
        ..Default::default()
    })
}
