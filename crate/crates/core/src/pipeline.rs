//! End-to-end steps shared by the command-line tools and the benchmarks:
//! index construction, model fitting and per-query localization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::descriptor::RealDescriptor;
use crate::error::{Error, Result};
use crate::ingest::{PoseRecord, QueryImage, QuerySet, ResultRecord};
use crate::map::MapDatabase;
use crate::matcher::{match_image, MapIndex, MatchStats, SearchConfig};
use crate::pose::{ransac_pnp, CameraIntrinsics, LocalizationResult, LocalizationStatus, PnpCorrespondence, RansacParams};
use crate::rtree::{build_forest, estimate_perturbation_model, Forest, ModelEstimate};

pub fn build_index(map: &MapDatabase, cfg: &RunConfig) -> Result<Forest> {
    build_forest(&map.binary_entries(), cfg.trees, cfg.depth, cfg.candidate_dims, cfg.forest_seed)
}

/// Matched `(database, query)` pairs: every ordered pair `(i, j)`, `i < j`,
/// of descriptors belonging to the same landmark.
pub fn matched_pairs(map: &MapDatabase) -> Vec<(&RealDescriptor, &RealDescriptor)> {
    let mut pairs = Vec::new();
    for l in map.landmarks() {
        for (i, a) in l.descriptors.iter().enumerate() {
            for b in &l.descriptors[i + 1..] {
                pairs.push((a.real(), b.real()));
            }
        }
    }
    pairs
}

/// Fits the perturbation model from landmarks that carry two or more descriptors.
pub fn fit_model(map: &MapDatabase, cfg: &RunConfig) -> Result<ModelEstimate> {
    let pairs = matched_pairs(map);
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "no landmark has two or more descriptors to pair; pass --synthetic-sigma <s> to fit \
             against synthetically perturbed copies instead"
                .into(),
        ));
    }
    estimate_perturbation_model(&pairs, cfg.model_tests, cfg.model_samples, cfg.model_seed)
}

/// Fits the model against copies of every database descriptor perturbed by
/// `N(0, sigma^2)` per element and renormalized.
pub fn fit_model_synthetic(map: &MapDatabase, sigma: f64, cfg: &RunConfig) -> Result<ModelEstimate> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("synthetic sigma must be positive, got {sigma}")));
    }
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model_seed);
    let mut pairs = Vec::new();
    for l in map.landmarks() {
        for d in &l.descriptors {
            let p = d.real().values();
            let q: Vec<f64> = p.iter().map(|v| v + noise.sample(&mut rng)).collect();
            if let Ok(q) = RealDescriptor::normalized(q) {
                pairs.push((p.to_vec(), q.values().to_vec()));
            }
        }
    }
    estimate_perturbation_model(&pairs, cfg.model_tests, cfg.model_samples, cfg.model_seed)
}

/// Seed for one query's RANSAC, independent of query order.
pub fn query_seed(base: u64, query_id: u64) -> u64 {
    let mut z = base ^ query_id.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub result: LocalizationResult,
    pub stats: MatchStats,
    pub correspondences: usize,
}

/// Matches one query image and solves its pose.
pub fn localize_query(
    index: &MapIndex<'_>,
    intrinsics: &CameraIntrinsics,
    query: &QueryImage,
    search: &SearchConfig,
    ransac: &RansacParams,
) -> Result<QueryOutcome> {
    let (matches, stats) = match_image(&query.keypoints, &query.global, index, search)?;
    let corr: Vec<PnpCorrespondence> = matches
        .iter()
        .map(|m| {
            let kp = &query.keypoints[m.query_index].geometry;
            let landmark = index.map.landmark(m.landmark_id).expect("matched landmark exists");
            PnpCorrespondence {
                pixel: nalgebra::Vector2::new(kp.pixel[0], kp.pixel[1]),
                point: landmark.position,
            }
        })
        .collect();
    let params = RansacParams {
        seed: query_seed(ransac.seed, query.id),
        ..*ransac
    };
    let result = ransac_pnp(&corr, intrinsics, &params)?;
    Ok(QueryOutcome {
        result,
        stats,
        correspondences: corr.len(),
    })
}

/// Localizes every query of a set in parallel; output follows input order.
/// A query whose matching fails is reported as `insufficient_matches`.
pub fn localize_all(index: &MapIndex<'_>, set: &QuerySet, cfg: &RunConfig) -> Result<Vec<ResultRecord>> {
    if set.queries.is_empty() {
        return Ok(Vec::new());
    }
    let intrinsics = set
        .intrinsics
        .ok_or_else(|| Error::InvalidInput("query set has no intrinsics".into()))?;
    let search = cfg.search_config();
    let ransac = cfg.ransac_params();
    search.validate()?;
    ransac.validate()?;
    Ok(set
        .queries
        .par_iter()
        .map(|q| match localize_query(index, &intrinsics, q, &search, &ransac) {
            Ok(outcome) => {
                log::debug!(
                    "query {}: {} keypoints, {:.1} mean candidates, {} matches, status {}",
                    q.id,
                    outcome.stats.keypoints,
                    outcome.stats.mean_candidates,
                    outcome.correspondences,
                    outcome.result.status.as_str()
                );
                record(q.id, &outcome.result)
            }
            Err(e) => {
                log::warn!("query {} failed: {e}", q.id);
                ResultRecord {
                    query_id: q.id,
                    status: LocalizationStatus::InsufficientMatches,
                    pose: PoseRecord::IDENTITY,
                    inliers: 0,
                }
            }
        })
        .collect())
}

pub fn record(query_id: u64, result: &LocalizationResult) -> ResultRecord {
    ResultRecord {
        query_id,
        status: result.status,
        pose: result.pose.as_ref().map(PoseRecord::from_pose).unwrap_or(PoseRecord::IDENTITY),
        inliers: result.inliers.len(),
    }
}
