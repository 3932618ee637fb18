use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LeafPath, RandomTree};
use crate::error::{Error, Result};
use crate::gaussian::{log_normal_cdf, normal_cdf};

/// Smallest sigma a fitted model may carry.
pub const SIGMA_FLOOR: f64 = f64::EPSILON;

/// Gaussian model of the per-dimension difference `p_d - q_d` between a
/// database descriptor `p` and a matching query descriptor `q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationModel {
    mu: f64,
    sigma: f64,
}

impl PerturbationModel {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::Config(format!(
                "perturbation model needs finite mu and positive sigma, got ({mu}, {sigma})"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn z(&self, q_d: f64) -> f64 {
        (self.mu + q_d) / self.sigma
    }
}

/// Probability that a database descriptor matching `q` takes `branch_bit` at a
/// node testing a dimension whose query value is `q_d`.
pub fn node_probability(q_d: f64, branch_bit: bool, model: &PerturbationModel) -> f64 {
    let z = model.z(q_d);
    if branch_bit {
        normal_cdf(z)
    } else {
        normal_cdf(-z)
    }
}

pub fn node_log_probability(q_d: f64, branch_bit: bool, model: &PerturbationModel) -> f64 {
    let z = model.z(q_d);
    if branch_bit {
        log_normal_cdf(z)
    } else {
        log_normal_cdf(-z)
    }
}

/// Log probability that the nearest neighbor of `query` sits in the leaf at `path`.
pub fn leaf_log_probability(
    tree: &RandomTree,
    query: &[f64],
    path: LeafPath,
    model: &PerturbationModel,
) -> Result<f64> {
    crate::error::check_dim(tree.dim(), query.len())?;
    let depth = tree.depth();
    if depth < 64 && path.0 >> depth != 0 {
        return Err(Error::InvalidInput(format!(
            "leaf path {:#x} does not fit a depth-{depth} tree",
            path.0
        )));
    }
    Ok(tree
        .path_dimensions(path)
        .into_iter()
        .enumerate()
        .map(|(level, d)| node_log_probability(query[d], path.bit(level as u32, depth), model))
        .sum())
}

/// A fitted model; `degenerate` is set when the observed spread was zero
/// and sigma was clamped to [`SIGMA_FLOOR`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelEstimate {
    pub model: PerturbationModel,
    pub degenerate: bool,
}

/// Fits a uniform (mu, sigma) from matched `(database, query)` descriptor pairs.
///
/// `tests_to_sample` distinct dimensions are drawn; for each, the mean and
/// standard deviation of `p_d - q_d` are estimated from `samples_per_test`
/// pairs (without replacement when enough pairs exist), and the per-dimension
/// estimates are averaged.
pub fn estimate_perturbation_model<A, B>(
    pairs: &[(A, B)],
    tests_to_sample: usize,
    samples_per_test: usize,
    seed: u64,
) -> Result<ModelEstimate>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    let first = pairs.first().ok_or(Error::Empty("no matched pairs to fit"))?;
    let dim = first.0.as_ref().len();
    for (p, q) in pairs {
        crate::error::check_dim(dim, p.as_ref().len())?;
        crate::error::check_dim(dim, q.as_ref().len())?;
    }
    if dim == 0 || tests_to_sample == 0 || samples_per_test == 0 {
        return Err(Error::Config(
            "model fit needs a nonzero dimension, test count and sample count".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = index::sample(&mut rng, dim, tests_to_sample.min(dim)).into_vec();
    dims.sort_unstable();

    let (mut mu_sum, mut sigma_sum) = (0.0, 0.0);
    for &d in &dims {
        let picks: Vec<usize> = if pairs.len() >= samples_per_test {
            index::sample(&mut rng, pairs.len(), samples_per_test).into_vec()
        } else {
            (0..samples_per_test)
                .map(|_| rng.random_range(0..pairs.len()))
                .collect()
        };
        let deltas = picks
            .iter()
            .map(|&i| pairs[i].0.as_ref()[d] - pairs[i].1.as_ref()[d]);
        let n = picks.len() as f64;
        let mean = deltas.clone().sum::<f64>() / n;
        let var = if picks.len() > 1 {
            deltas.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mu_sum += mean;
        sigma_sum += var.sqrt();
    }
    let k = dims.len() as f64;
    let mu = mu_sum / k;
    let sigma = sigma_sum / k;
    let degenerate = !(sigma > SIGMA_FLOOR);
    Ok(ModelEstimate {
        model: PerturbationModel::new(mu, if degenerate { SIGMA_FLOOR } else { sigma })?,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::BinaryDescriptor;
    use crate::map::LandmarkId;
    use crate::rtree::{build_tree, Entry, TreeParams};
    use rand_distr::{Distribution, Normal};

    fn random_tree(depth: u32, dim: usize, seed: u64) -> RandomTree {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<_> = (0..64)
            .map(|i| {
                let bits: Vec<bool> = (0..dim).map(|_| rng.random()).collect();
                (
                    Entry {
                        landmark: LandmarkId(i),
                        descriptor: 0,
                    },
                    BinaryDescriptor::from_bits(&bits),
                )
            })
            .collect();
        build_tree(&entries, TreeParams { depth, candidate_dims: 4, seed }).unwrap()
    }

    #[test]
    fn node_probability_cases() {
        let m = PerturbationModel::new(0.1, 0.2).unwrap();
        assert!((node_probability(-0.1, false, &m) - 0.5).abs() < 1e-15);
        assert!((node_probability(-0.1, true, &m) - 0.5).abs() < 1e-15);
        assert!(node_probability(50.0, true, &m) > 1.0 - 1e-15);

        let m = PerturbationModel::new(0.0, 0.15).unwrap();
        assert!((node_probability(0.3, true, &m) - 0.977_249_868_051_820_8).abs() < 1e-12);
        assert!(
            (node_probability(0.3, true, &m) + node_probability(0.3, false, &m) - 1.0).abs() < 1e-15
        );
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(PerturbationModel::new(0.0, 0.0).is_err());
        assert!(PerturbationModel::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn single_level_tree_is_single_factor() {
        let tree = random_tree(1, 8, 2);
        let q = [0.1, -0.2, 0.3, -0.4, 0.05, 0.0, -0.01, 0.2];
        let m = PerturbationModel::new(0.01, 0.1).unwrap();
        let d = tree.test_dimension(1);
        let lp = leaf_log_probability(&tree, &q, LeafPath(1), &m).unwrap();
        assert!((lp - node_probability(q[d], true, &m).ln()).abs() < 1e-15);
        assert!(leaf_log_probability(&tree, &q, LeafPath(2), &m).is_err());
        assert!(leaf_log_probability(&tree, &q[..7], LeafPath(0), &m).is_err());
    }

    #[test]
    fn leaf_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for depth in [1u32, 4, 7, 10] {
            let tree = random_tree(depth, 16, depth as u64);
            let q: Vec<f64> = (0..16).map(|_| rng.random_range(-0.3..0.3)).collect();
            let m = PerturbationModel::new(rng.random_range(-0.05..0.05), rng.random_range(0.02..0.3)).unwrap();
            let total: f64 = (0..1u64 << depth)
                .map(|p| leaf_log_probability(&tree, &q, LeafPath(p), &m).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "depth {depth}: {total}");
        }
    }

    #[test]
    fn own_leaf_beats_its_sibling_when_unbiased() {
        // Tests are path dependent, so flipping an early bit changes every later
        // test; only the leaf sharing the parent is guaranteed to be less likely.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = PerturbationModel::new(0.0, 0.1).unwrap();
        for depth in [1u32, 3, 6, 9] {
            let tree = random_tree(depth, 16, 100 + depth as u64);
            for _ in 0..20 {
                let q: Vec<f64> = (0..16).map(|_| rng.random_range(-0.3..0.3)).collect();
                let bits: Vec<bool> = q.iter().map(|v| *v >= 0.0).collect();
                let own = tree.traverse(&BinaryDescriptor::from_bits(&bits)).unwrap();
                let own_lp = leaf_log_probability(&tree, &q, own, &m).unwrap();
                let sibling = LeafPath(own.0 ^ 1);
                assert!(own_lp >= leaf_log_probability(&tree, &q, sibling, &m).unwrap());
            }
        }
    }

    #[test]
    fn own_leaf_is_most_likely_when_signs_are_unambiguous() {
        // |q_d| >= 0.05 everywhere and sigma = 0.01: every own-branch factor
        // exceeds 1 - 1e-6, so the traversal leaf dominates all 2^K leaves.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = PerturbationModel::new(0.0, 0.01).unwrap();
        let depth = 8;
        let tree = random_tree(depth, 16, 12);
        for _ in 0..10 {
            let q: Vec<f64> = (0..16)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..0.3);
                    if rng.random() { v } else { -v }
                })
                .collect();
            let bits: Vec<bool> = q.iter().map(|v| *v >= 0.0).collect();
            let own = tree.traverse(&BinaryDescriptor::from_bits(&bits)).unwrap();
            let best = (0..1u64 << depth)
                .max_by(|a, b| {
                    let la = leaf_log_probability(&tree, &q, LeafPath(*a), &m).unwrap();
                    let lb = leaf_log_probability(&tree, &q, LeafPath(*b), &m).unwrap();
                    la.total_cmp(&lb)
                })
                .unwrap();
            assert_eq!(LeafPath(best), own);
        }
    }

    #[test]
    fn identical_pairs_give_degenerate_model() {
        let v = vec![0.5, -0.5, 0.5, -0.5];
        let pairs = vec![(v.clone(), v.clone()); 10];
        let est = estimate_perturbation_model(&pairs, 3, 100, 1).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.model.mu(), 0.0);
        assert_eq!(est.model.sigma(), SIGMA_FLOOR);
    }

    #[test]
    fn recovers_generating_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = Normal::new(0.01, 0.05).unwrap();
        let dim = 16;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..100_000)
            .map(|_| {
                let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.25..0.25)).collect();
                let p: Vec<f64> = q.iter().map(|x| x + noise.sample(&mut rng)).collect();
                (p, q)
            })
            .collect();
        let est = estimate_perturbation_model(&pairs, 10, 100_000, 5).unwrap();
        assert!(!est.degenerate);
        assert!((est.model.mu() - 0.01).abs() <= 0.002, "{:?}", est);
        assert!((est.model.sigma() - 0.05).abs() <= 0.002, "{:?}", est);
        let again = estimate_perturbation_model(&pairs, 10, 100_000, 5).unwrap();
        assert_eq!(est, again);
    }

    #[test]
    fn empty_pairs_rejected() {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![];
        assert!(estimate_perturbation_model(&pairs, 10, 10, 0).is_err());
    }
}
