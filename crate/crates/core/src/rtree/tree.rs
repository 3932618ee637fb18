use rustc_hash::FxHashMap as HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Entry;
use crate::descriptor::BinaryDescriptor;
use crate::error::{Error, Result};

/// Deepest supported tree; leaf paths are packed into a `u64` node id.
pub const MAX_DEPTH: u32 = 48;

/// Weight of the split-landmark count against the balance penalty.
const GROUP_SPLIT_WEIGHT: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeParams {
    pub depth: u32,
    pub candidate_dims: usize,
    pub seed: u64,
}

/// K-bit root-to-leaf path; the first decision is the most significant bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafPath(pub u64);

impl LeafPath {
    /// Branch taken at `level` (0 = root) in a tree of the given depth.
    pub fn bit(self, level: u32, depth: u32) -> bool {
        (self.0 >> (depth - 1 - level)) & 1 == 1
    }
}

/// A depth-K tree of single-dimension tests.
///
/// Internal nodes are numbered heap style: the root is 1 and the children of
/// `n` are `2n` (bit 0) and `2n + 1` (bit 1). Tests are stored for every node
/// that holds at least one database entry. Nodes nobody reaches get their test
/// from the same selection rule run on an empty set, which reduces to the
/// smallest of the node's sampled dimensions, so the table is complete without
/// being materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomTree {
    params: TreeParams,
    dim: usize,
    tests: HashMap<u64, u32>,
    leaves: HashMap<u64, Vec<Entry>>,
    entry_count: usize,
    /// Topmost node of every subtree that holds exactly one nonempty leaf,
    /// mapped to that leaf's path. Derived from `leaves`.
    shortcuts: HashMap<u64, u64>,
}

/// Number of nonempty leaves below every internal node on some leaf path.
fn subtree_leaf_counts(leaves: &HashMap<u64, Vec<Entry>>, depth: u32) -> HashMap<u64, u32> {
    let mut counts = HashMap::with_capacity_and_hasher(leaves.len() * depth as usize / 2, Default::default());
    for &path in leaves.keys() {
        for level in 0..depth {
            *counts.entry((1u64 << level) | (path >> (depth - level))).or_insert(0) += 1;
        }
    }
    counts
}

fn shortcuts_for(leaves: &HashMap<u64, Vec<Entry>>, counts: &HashMap<u64, u32>, depth: u32) -> HashMap<u64, u64> {
    let mut out = HashMap::with_capacity_and_hasher(leaves.len(), Default::default());
    for &path in leaves.keys() {
        if let Some(node) = (0..depth)
            .map(|level| (1u64 << level) | (path >> (depth - level)))
            .find(|node| counts[node] == 1)
        {
            out.insert(node, path);
        }
    }
    out
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Candidate dimensions for a node, ascending.
fn sampled_dims(seed: u64, node: u64, dim: usize, candidate_dims: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(node)));
    let mut dims = index::sample(&mut rng, dim, candidate_dims.min(dim)).into_vec();
    dims.sort_unstable();
    dims
}

/// Picks the test dimension for the entries at one node: balance penalty
/// plus the number of landmarks whose descriptors would be split, lowest
/// score wins, ties to the smaller dimension. `members` must be grouped by
/// landmark.
fn select_dimension(dims: &[usize], members: &[usize], entries: &[(Entry, BinaryDescriptor)]) -> usize {
    let mut best = (u64::MAX, usize::MAX);
    for &d in dims {
        let ones = members.iter().filter(|&&m| entries[m].1.bit(d)).count() as u64;
        let zeros = members.len() as u64 - ones;
        let balance = ones.abs_diff(zeros);

        let mut split_groups = 0u64;
        let mut start = 0;
        while start < members.len() {
            let landmark = entries[members[start]].0.landmark;
            let mut end = start + 1;
            while end < members.len() && entries[members[end]].0.landmark == landmark {
                end += 1;
            }
            let first = entries[members[start]].1.bit(d);
            if members[start + 1..end].iter().any(|&m| entries[m].1.bit(d) != first) {
                split_groups += 1;
            }
            start = end;
        }

        let score = balance + GROUP_SPLIT_WEIGHT * split_groups;
        if score < best.0 {
            best = (score, d);
        }
    }
    best.1
}

fn validate_params(params: &TreeParams) -> Result<()> {
    if params.depth == 0 || params.depth > MAX_DEPTH {
        return Err(Error::Config(format!(
            "tree depth must be in 1..={MAX_DEPTH}, got {}",
            params.depth
        )));
    }
    if params.candidate_dims == 0 {
        return Err(Error::Config("candidate dimension count must be at least 1".into()));
    }
    Ok(())
}

pub fn build_tree(entries: &[(Entry, BinaryDescriptor)], params: TreeParams) -> Result<RandomTree> {
    validate_params(&params)?;
    let first = entries.first().ok_or(Error::Empty("no entries to index"))?;
    let dim = first.1.dim();
    if dim == 0 {
        return Err(Error::InvalidDescriptor("zero-dimensional descriptors".into()));
    }
    if dim > u32::MAX as usize {
        return Err(Error::InvalidDescriptor("descriptor dimension too large".into()));
    }
    for (_, b) in entries {
        crate::error::check_dim(dim, b.dim())?;
    }

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&i| entries[i].0);

    let mut tree = RandomTree {
        params,
        dim,
        tests: HashMap::default(),
        leaves: HashMap::default(),
        entry_count: entries.len(),
        shortcuts: HashMap::default(),
    };

    let mut stack = vec![(1u64, 0u32, order)];
    while let Some((node, level, members)) = stack.pop() {
        if level == params.depth {
            let path = node - (1u64 << params.depth);
            tree.leaves
                .insert(path, members.iter().map(|&m| entries[m].0).collect());
            continue;
        }
        let dims = sampled_dims(params.seed, node, dim, params.candidate_dims);
        let d = select_dimension(&dims, &members, entries);
        tree.tests.insert(node, d as u32);
        let (ones, zeros): (Vec<usize>, Vec<usize>) =
            members.into_iter().partition(|&m| entries[m].1.bit(d));
        if !zeros.is_empty() {
            stack.push((2 * node, level + 1, zeros));
        }
        if !ones.is_empty() {
            stack.push((2 * node + 1, level + 1, ones));
        }
    }
    let counts = subtree_leaf_counts(&tree.leaves, params.depth);
    tree.shortcuts = shortcuts_for(&tree.leaves, &counts, params.depth);
    Ok(tree)
}

impl RandomTree {
    pub(crate) fn from_parts(
        params: TreeParams,
        dim: usize,
        tests: HashMap<u64, u32>,
        leaves: HashMap<u64, Vec<Entry>>,
    ) -> Result<Self> {
        validate_params(&params)?;
        let entry_count = leaves.values().map(Vec::len).sum();
        if tests.values().any(|&d| d as usize >= dim) {
            return Err(Error::Container("node test dimension out of range".into()));
        }
        let first_leaf = 1u64 << params.depth;
        if tests.keys().any(|&n| n == 0 || n >= first_leaf) || leaves.keys().any(|&p| p >= first_leaf) {
            return Err(Error::Container("node id out of range for tree depth".into()));
        }
        if leaves.values().any(Vec::is_empty) {
            return Err(Error::Container("empty leaf bucket".into()));
        }
        // stored tests must be exactly the internal nodes above nonempty leaves
        let counts = subtree_leaf_counts(&leaves, params.depth);
        if counts.len() != tests.len() || counts.keys().any(|n| !tests.contains_key(n)) {
            return Err(Error::Container("node tests do not match the occupied nodes".into()));
        }
        let shortcuts = shortcuts_for(&leaves, &counts, params.depth);
        Ok(Self {
            params,
            dim,
            tests,
            leaves,
            entry_count,
            shortcuts,
        })
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn depth(&self) -> u32 {
        self.params.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry_count(&self) -> usize {
        self.entry_count
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Test dimension of an internal node.
    pub fn test_dimension(&self, node: u64) -> usize {
        match self.tests.get(&node) {
            Some(&d) => d as usize,
            None => sampled_dims(self.params.seed, node, self.dim, self.params.candidate_dims)[0],
        }
    }

    /// Whether the subtree rooted at `node` (at `level`) holds any entry.
    pub(crate) fn is_occupied(&self, node: u64, level: u32) -> bool {
        if level == self.params.depth {
            self.leaves.contains_key(&(node - (1u64 << level)))
        } else {
            self.tests.contains_key(&node)
        }
    }

    /// Leaf path of the single nonempty leaf below `node`, when `node` is
    /// the topmost node with that property.
    pub(crate) fn shortcut(&self, node: u64) -> Option<LeafPath> {
        self.shortcuts.get(&node).map(|&p| LeafPath(p))
    }

    /// Follows the node tests; reads bits only, no distance computation.
    pub fn traverse(&self, query: &BinaryDescriptor) -> Result<LeafPath> {
        crate::error::check_dim(self.dim, query.dim())?;
        let mut node = 1u64;
        for _ in 0..self.params.depth {
            let d = self.test_dimension(node);
            node = 2 * node + query.bit(d) as u64;
        }
        Ok(LeafPath(node - (1u64 << self.params.depth)))
    }

    pub fn leaf(&self, path: LeafPath) -> Option<&[Entry]> {
        self.leaves.get(&path.0).map(Vec::as_slice)
    }

    /// Nonempty leaves sorted by path.
    pub fn leaves(&self) -> Vec<(LeafPath, &[Entry])> {
        let mut out: Vec<_> = self
            .leaves
            .iter()
            .map(|(&p, e)| (LeafPath(p), e.as_slice()))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }

    /// Stored internal-node tests sorted by node id.
    pub(crate) fn stored_tests(&self) -> Vec<(u64, u32)> {
        let mut out: Vec<_> = self.tests.iter().map(|(&n, &d)| (n, d)).collect();
        out.sort_unstable();
        out
    }

    /// Test dimensions along a leaf path, root first.
    pub fn path_dimensions(&self, path: LeafPath) -> Vec<usize> {
        let depth = self.params.depth;
        let mut node = 1u64;
        (0..depth)
            .map(|level| {
                let d = self.test_dimension(node);
                node = 2 * node + path.bit(level, depth) as u64;
                d
            })
            .collect()
    }

    /// Histogram of leaf sizes: `result[k]` = number of leaves holding `k` entries.
    pub fn occupancy_histogram(&self) -> Vec<usize> {
        let max = self.leaves.values().map(Vec::len).max().unwrap_or(0);
        let mut hist = vec![0; max + 1];
        for v in self.leaves.values() {
            hist[v.len()] += 1;
        }
        hist
    }
}
