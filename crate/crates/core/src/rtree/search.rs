use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rayon::prelude::*;

use super::model::node_log_probability;
use super::tree::{build_tree, LeafPath, RandomTree, TreeParams};
use super::{Entry, PerturbationModel};
use crate::descriptor::BinaryDescriptor;
use crate::error::{Error, Result};

/// A set of random trees built over the same entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    trees: Vec<RandomTree>,
    seed: u64,
}

fn tree_seed(forest_seed: u64, tree: usize) -> u64 {
    forest_seed
        .wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add((tree as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Builds `tree_count` trees in parallel, tree `i` seeded from `(seed, i)`.
pub fn build_forest(
    entries: &[(Entry, BinaryDescriptor)],
    tree_count: usize,
    depth: u32,
    candidate_dims: usize,
    seed: u64,
) -> Result<Forest> {
    if tree_count == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let trees = (0..tree_count)
        .into_par_iter()
        .map(|i| {
            build_tree(
                entries,
                TreeParams {
                    depth,
                    candidate_dims,
                    seed: tree_seed(seed, i),
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest { trees, seed })
}

impl Forest {
    pub(crate) fn from_parts(trees: Vec<RandomTree>, seed: u64) -> Result<Self> {
        let first = trees.first().ok_or(Error::Empty("forest has no trees"))?;
        let (dim, depth, count) = (first.dim(), first.depth(), first.entry_count());
        if trees
            .iter()
            .any(|t| t.dim() != dim || t.depth() != depth || t.entry_count() != count)
        {
            return Err(Error::Container("trees disagree on dimension, depth or entry count".into()));
        }
        Ok(Self { trees, seed })
    }

    pub fn trees(&self) -> &[RandomTree] {
        &self.trees
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.trees[0].dim()
    }

    pub fn depth(&self) -> u32 {
        self.trees[0].depth()
    }

    pub fn entry_count(&self) -> usize {
        self.trees[0].entry_count()
    }

    pub fn nonempty_leaf_count(&self) -> usize {
        self.trees.iter().map(RandomTree::leaf_count).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafHit {
    pub tree: usize,
    pub path: LeafPath,
    pub log_probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Emitted leaves in non-increasing probability.
    pub leaves: Vec<LeafHit>,
    /// Union of the emitted buckets, sorted and deduplicated.
    pub candidates: Vec<Entry>,
}

struct Pending {
    log_probability: f64,
    tree: usize,
    node: u64,
    level: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Max-heap on probability; ties pop the lower tree, then the lower node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_probability
            .total_cmp(&other.log_probability)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Best-first search over the nonempty leaves of every tree at once.
///
/// One queue spans the whole forest, seeded with each root. Partial paths
/// carry their accumulated log probability; every branch factor is at most
/// one, so complete paths pop in non-increasing order. Subtrees without
/// entries are never queued, so empty leaves cost nothing. The search stops
/// after `max_leaves` leaves have been emitted.
pub fn priority_search(
    forest: &Forest,
    query: &[f64],
    model: &PerturbationModel,
    max_leaves: usize,
) -> Result<SearchResult> {
    if forest.trees.is_empty() {
        return Err(Error::Empty("forest has no trees"));
    }
    if max_leaves == 0 {
        return Err(Error::Config("max_leaves must be at least 1".into()));
    }
    crate::error::check_dim(forest.dim(), query.len())?;

    let branch_log_p: Vec<[f64; 2]> = query
        .iter()
        .map(|&q| {
            [
                node_log_probability(q, false, model),
                node_log_probability(q, true, model),
            ]
        })
        .collect();

    let mut heap = BinaryHeap::new();
    for (t, tree) in forest.trees.iter().enumerate() {
        // a single-leaf tree is handled by the root shortcut below
        if let Some(path) = tree.shortcut(1) {
            let depth = tree.depth();
            let (mut lp, mut node) = (0.0, 1u64);
            for level in 0..depth {
                let b = path.bit(level, depth);
                lp += branch_log_p[tree.test_dimension(node)][b as usize];
                node = 2 * node + b as u64;
            }
            heap.push(Pending {
                log_probability: lp,
                tree: t,
                node,
                level: depth,
            });
        } else if tree.is_occupied(1, 0) {
            heap.push(Pending {
                log_probability: 0.0,
                tree: t,
                node: 1,
                level: 0,
            });
        }
    }

    let mut leaves = Vec::with_capacity(max_leaves.min(1024));
    let mut candidates = BTreeSet::new();
    while let Some(item) = heap.pop() {
        let tree = &forest.trees[item.tree];
        let depth = tree.depth();
        if item.level == depth {
            let path = LeafPath(item.node - (1u64 << depth));
            if let Some(bucket) = tree.leaf(path) {
                candidates.extend(bucket.iter().copied());
            }
            leaves.push(LeafHit {
                tree: item.tree,
                path,
                log_probability: item.log_probability,
            });
            if leaves.len() == max_leaves {
                break;
            }
            continue;
        }
        let d = tree.test_dimension(item.node);
        for bit in [false, true] {
            let child = 2 * item.node + bit as u64;
            let level = item.level + 1;
            if !tree.is_occupied(child, level) {
                continue;
            }
            let mut log_probability = item.log_probability + branch_log_p[d][bit as usize];
            let mut node = child;
            let mut node_level = level;
            // A subtree with one nonempty leaf is resolved in one step; its
            // full path probability never exceeds the prefix, so the pop
            // order is unchanged.
            if let Some(path) = tree.shortcut(child) {
                while node_level < depth {
                    let b = path.bit(node_level, depth);
                    log_probability += branch_log_p[tree.test_dimension(node)][b as usize];
                    node = 2 * node + b as u64;
                    node_level += 1;
                }
            }
            heap.push(Pending {
                log_probability,
                tree: item.tree,
                node,
                level: node_level,
            });
        }
    }

    Ok(SearchResult {
        leaves,
        candidates: candidates.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{binarize, l2_distance, RealDescriptor};
    use crate::map::LandmarkId;
    use crate::rtree::leaf_log_probability;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_db(n: usize, dim: usize, seed: u64) -> Vec<RealDescriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                RealDescriptor::normalized(v).unwrap()
            })
            .collect()
    }

    fn entries(db: &[RealDescriptor]) -> Vec<(Entry, BinaryDescriptor)> {
        db.iter()
            .enumerate()
            .map(|(i, d)| {
                (
                    Entry {
                        landmark: LandmarkId(i as u32),
                        descriptor: 0,
                    },
                    binarize(d),
                )
            })
            .collect()
    }

    #[test]
    fn single_tree_forest_equals_build_tree() {
        let db = random_db(100, 32, 1);
        let e = entries(&db);
        let forest = build_forest(&e, 1, 6, 8, 17).unwrap();
        let tree = build_tree(
            &e,
            TreeParams {
                depth: 6,
                candidate_dims: 8,
                seed: tree_seed(17, 0),
            },
        )
        .unwrap();
        assert_eq!(forest.trees()[0], tree);
    }

    #[test]
    fn forest_build_is_deterministic_and_round_trips() {
        let db = random_db(300, 64, 2);
        let e = entries(&db);
        let a = build_forest(&e, 6, 23, 16, 5).unwrap();
        let b = build_forest(&e, 6, 23, 16, 5).unwrap();
        assert_eq!(a, b);
        for tree in a.trees() {
            for (ent, bits) in &e {
                assert!(tree.leaf(tree.traverse(bits).unwrap()).unwrap().contains(ent));
            }
        }
        assert!(build_forest(&e, 0, 8, 8, 0).is_err());
    }

    #[test]
    fn exhaustive_budget_returns_whole_database() {
        let db = random_db(200, 32, 3);
        let forest = build_forest(&entries(&db), 3, 5, 8, 9).unwrap();
        let model = PerturbationModel::new(0.0, 0.1).unwrap();
        let q = random_db(1, 32, 99).remove(0);
        let res = priority_search(&forest, q.values(), &model, forest.nonempty_leaf_count()).unwrap();
        assert_eq!(res.candidates.len(), 200);
        assert_eq!(res.leaves.len(), forest.nonempty_leaf_count());

        // nearest neighbor over the candidates equals brute force
        let brute = (0..db.len())
            .min_by(|&a, &b| {
                l2_distance(&q, &db[a]).unwrap().total_cmp(&l2_distance(&q, &db[b]).unwrap())
            })
            .unwrap();
        assert!(res.candidates.iter().any(|c| c.landmark.0 as usize == brute));
    }

    #[test]
    fn emission_order_matches_exhaustive_ranking() {
        let model = PerturbationModel::new(0.005, 0.08).unwrap();
        for seed in 0..5u64 {
            let db = random_db(150, 24, 10 + seed);
            let forest = build_forest(&entries(&db), 1, 8, 6, seed).unwrap();
            let tree = &forest.trees()[0];
            let q = random_db(1, 24, 500 + seed).remove(0);

            let mut oracle: Vec<(f64, LeafPath)> = tree
                .leaves()
                .into_iter()
                .map(|(p, _)| (leaf_log_probability(tree, q.values(), p, &model).unwrap(), p))
                .collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

            let res = priority_search(&forest, q.values(), &model, oracle.len()).unwrap();
            assert_eq!(res.leaves.len(), oracle.len());
            for (hit, (lp, path)) in res.leaves.iter().zip(&oracle) {
                assert!((hit.log_probability - lp).abs() < 1e-9);
                // ties may reorder paths with equal probability
                if hit.path != *path {
                    let other = leaf_log_probability(tree, q.values(), hit.path, &model).unwrap();
                    assert!((other - lp).abs() < 1e-9);
                }
            }
            assert!(res.leaves.windows(2).all(|w| w[0].log_probability >= w[1].log_probability));

            let top = priority_search(&forest, q.values(), &model, 1).unwrap();
            assert_eq!(top.leaves[0].path, oracle[0].1);
        }
    }

    #[test]
    fn global_interleave_is_monotone_across_trees() {
        let db = random_db(400, 32, 4);
        let forest = build_forest(&entries(&db), 6, 8, 8, 4).unwrap();
        let model = PerturbationModel::new(0.0, 0.05).unwrap();
        let q = random_db(1, 32, 7).remove(0);
        let res = priority_search(&forest, q.values(), &model, 50).unwrap();
        assert_eq!(res.leaves.len(), 50);
        assert!(res.leaves.windows(2).all(|w| w[0].log_probability >= w[1].log_probability));
        assert!(res.leaves.iter().any(|h| h.tree != res.leaves[0].tree));
    }

    #[test]
    fn rejects_bad_arguments() {
        let db = random_db(10, 8, 5);
        let forest = build_forest(&entries(&db), 1, 3, 4, 0).unwrap();
        let model = PerturbationModel::new(0.0, 0.05).unwrap();
        assert!(priority_search(&forest, db[0].values(), &model, 0).is_err());
        assert!(priority_search(&forest, &db[0].values()[..7], &model, 1).is_err());
    }
}
