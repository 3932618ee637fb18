//! Invariant checks run by `parloc selftest` on freshly generated fixtures.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::descriptor::{l2_distance, RealDescriptor};
use crate::error::Result;
use crate::ingest::{format_frames, format_landmarks, parse_frames, parse_landmarks};
use crate::map::{LandmarkId, MapDatabase};
use crate::matcher::MapIndex;
use crate::pipeline::{build_index, fit_model_synthetic, localize_all};
use crate::pose::{pose_error, project, ransac_pnp, CameraIntrinsics, CameraPose, LocalizationStatus, PnpCorrespondence, RansacParams};
use crate::rtree::{
    build_forest, build_tree, leaf_log_probability, priority_search, read_forest, write_forest, Entry, LeafPath,
    PerturbationModel, TreeParams,
};
use crate::synth::{localization_scene, perturb_unit, random_unit, QueryKind, SceneParams};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn random_entries(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Result<Vec<(LandmarkId, RealDescriptor)>> {
    (0..n)
        .map(|i| Ok((LandmarkId(i as u32), RealDescriptor::new(random_unit(rng, dim))?)))
        .collect()
}

fn binary(db: &[(LandmarkId, RealDescriptor)]) -> Vec<(Entry, crate::descriptor::BinaryDescriptor)> {
    db.iter()
        .map(|(id, d)| {
            (
                Entry {
                    landmark: *id,
                    descriptor: 0,
                },
                d.binarize(),
            )
        })
        .collect()
}

fn forest_round_trip(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db = random_entries(&mut rng, 300, 64)?;
    let forest = build_forest(&binary(&db), 4, 12, 16, seed)?;
    let mut bytes = Vec::new();
    write_forest(&forest, &mut bytes).map_err(|e| crate::Error::InvalidInput(e.to_string()))?;
    let back = read_forest(&bytes)?;
    Ok((back == forest, format!("{} bytes", bytes.len())))
}

fn exhaustive_search(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db = random_entries(&mut rng, 300, 64)?;
    let forest = build_forest(&binary(&db), 4, 8, 16, seed)?;
    let model = PerturbationModel::new(0.0, 0.05)?;
    let mut misses = 0;
    let queries = 30;
    for _ in 0..queries {
        let target = &db[rng.random_range(0..db.len())].1;
        let q = RealDescriptor::new(perturb_unit(&mut rng, target.values(), 0.05))?;
        let mut best = (f64::INFINITY, LandmarkId(0));
        for (id, d) in &db {
            let dist = l2_distance(&q, d)?;
            if dist < best.0 {
                best = (dist, *id);
            }
        }
        let found = priority_search(&forest, q.values(), &model, forest.nonempty_leaf_count())?;
        if !found.candidates.iter().any(|e| e.landmark == best.1) {
            misses += 1;
        }
    }
    Ok((misses == 0, format!("{misses}/{queries} nearest neighbors missed")))
}

fn leaf_mass(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = binary(&random_entries(&mut rng, 200, 32)?);
    let depth = 8;
    let tree = build_tree(
        &entries,
        TreeParams {
            depth,
            candidate_dims: 8,
            seed,
        },
    )?;
    let model = PerturbationModel::new(0.01, 0.05)?;
    let query = random_unit(&mut rng, 32);
    let mut total = 0.0;
    for p in 0..1u64 << depth {
        total += leaf_log_probability(&tree, &query, LeafPath(p), &model)?.exp();
    }
    Ok(((total - 1.0).abs() <= 1e-9, format!("sum {total:.12}")))
}

fn map_text_round_trip(seed: u64) -> Result<(bool, String)> {
    let scene = localization_scene(
        &SceneParams {
            places: 2,
            landmarks_per_place: 20,
            frames_per_place: 3,
            local_dim: 16,
            global_dim: 8,
            seed,
            ..Default::default()
        },
        &[],
    )?;
    let path = std::path::Path::new("<selftest>");
    let (lt, ft) = (format_landmarks(&scene.map), format_frames(&scene.map));
    let back = MapDatabase::new(parse_landmarks(&lt, path)?, parse_frames(&ft, path)?)?;
    let same = format_landmarks(&back) == lt && format_frames(&back) == ft;
    Ok((same, format!("{} landmarks", back.landmarks().len())))
}

fn noiseless_pose(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0)?;
    let rot = nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.3);
    let truth = CameraPose::new(*rot.matrix(), Vector3::new(0.3, -0.1, 0.5))?;
    let mut corr = Vec::new();
    while corr.len() < 60 {
        let p = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..10.0));
        let world = truth.rotation().transpose() * (p - truth.translation());
        let pixel = project(&truth, &k, &world)?;
        corr.push(PnpCorrespondence { pixel, point: world });
    }
    let result = ransac_pnp(&corr, &k, &RansacParams::default())?;
    let Some(pose) = result.pose else {
        return Ok((false, format!("status {}", result.status.as_str())));
    };
    let (dt, dr) = pose_error(&pose, &truth);
    Ok((dt <= 1e-6 && dr <= 1e-6, format!("{dt:.2e} m, {dr:.2e} deg")))
}

fn scene_localization(seed: u64) -> Result<(bool, String)> {
    let params = SceneParams {
        places: 5,
        landmarks_per_place: 60,
        local_dim: 64,
        seed,
        ..Default::default()
    };
    let scene = localization_scene(&params, &[QueryKind::Normal; 20])?;
    let cfg = RunConfig::default();
    let forest = build_index(&scene.map, &cfg)?;
    let model = fit_model_synthetic(&scene.map, params.local_noise, &cfg)?.model;
    let index = MapIndex::new(&scene.map, &forest, model)?;
    let results = localize_all(&index, &scene.queries, &cfg)?;
    let ok = results.iter().filter(|r| r.status == LocalizationStatus::Ok).count();
    Ok((ok >= 19, format!("{ok}/{} registered", results.len())))
}

/// Runs every check; none of them stops the others.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    vec![
        check("forest container round trip", forest_round_trip(seed)),
        check("exhaustive search finds the nearest neighbor", exhaustive_search(seed)),
        check("leaf probabilities sum to one", leaf_mass(seed)),
        check("map text round trip", map_text_round_trip(seed)),
        check("noiseless pose recovery", noiseless_pose(seed)),
        check("synthetic scene localization", scene_localization(seed)),
    ]
}
