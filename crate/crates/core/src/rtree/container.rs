//! Versioned little-endian forest container.
//!
//! ```text
//! header   magic "PLRT" | version u32 | dim u32 | trees u32 | depth u32
//!          | entries u64 | candidate_dims u32 | forest_seed u64
//! per tree tree_seed u64
//!          | test_count u64 | test_count x (node u64, dim u32)     ascending node
//!          | leaf_count u64 | leaf_count x (path u64, n u32, n x (landmark u32, descriptor u32))
//!                                                                 ascending path, entries ascending
//! ```
//!
//! Only tests of nodes that hold entries are stored; the remaining tests are
//! recomputed from the tree seed and candidate count on load.

use rustc_hash::FxHashMap as HashMap;
use std::io::Write;

use super::search::Forest;
use super::tree::{RandomTree, TreeParams};
use super::Entry;
use crate::error::{Error, Result};
use crate::map::LandmarkId;

pub const FOREST_MAGIC: &[u8; 4] = b"PLRT";
pub const FOREST_VERSION: u32 = 1;

pub fn write_forest<W: Write>(forest: &Forest, mut out: W) -> std::io::Result<()> {
    let first = &forest.trees()[0];
    let mut buf = Vec::new();
    buf.extend_from_slice(FOREST_MAGIC);
    buf.extend_from_slice(&FOREST_VERSION.to_le_bytes());
    buf.extend_from_slice(&(forest.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(forest.trees().len() as u32).to_le_bytes());
    buf.extend_from_slice(&forest.depth().to_le_bytes());
    buf.extend_from_slice(&(forest.entry_count() as u64).to_le_bytes());
    buf.extend_from_slice(&(first.params().candidate_dims as u32).to_le_bytes());
    buf.extend_from_slice(&forest.seed().to_le_bytes());
    for tree in forest.trees() {
        buf.extend_from_slice(&tree.params().seed.to_le_bytes());
        let tests = tree.stored_tests();
        buf.extend_from_slice(&(tests.len() as u64).to_le_bytes());
        for (node, dim) in tests {
            buf.extend_from_slice(&node.to_le_bytes());
            buf.extend_from_slice(&dim.to_le_bytes());
        }
        let leaves = tree.leaves();
        buf.extend_from_slice(&(leaves.len() as u64).to_le_bytes());
        for (path, bucket) in leaves {
            buf.extend_from_slice(&path.0.to_le_bytes());
            buf.extend_from_slice(&(bucket.len() as u32).to_le_bytes());
            let mut sorted = bucket.to_vec();
            sorted.sort_unstable();
            for e in sorted {
                buf.extend_from_slice(&e.landmark.0.to_le_bytes());
                buf.extend_from_slice(&e.descriptor.to_le_bytes());
            }
        }
    }
    out.write_all(&buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Container(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        // Reject counts that cannot fit in the remaining bytes before allocating.
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(item_bytes as u64) > remaining {
            return Err(Error::Container(format!("count {n} exceeds remaining data")));
        }
        Ok(n as usize)
    }
}

pub fn read_forest(bytes: &[u8]) -> Result<Forest> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != FOREST_MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FOREST_VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let dim = r.u32()? as usize;
    let tree_count = r.u32()? as usize;
    let depth = r.u32()?;
    let entry_count = r.u64()? as usize;
    let candidate_dims = r.u32()? as usize;
    let forest_seed = r.u64()?;
    if dim == 0 {
        return Err(Error::Container("zero descriptor dimension".into()));
    }

    let mut trees = Vec::with_capacity(tree_count.min(1024));
    for _ in 0..tree_count {
        let seed = r.u64()?;
        let n_tests = r.count(12)?;
        let mut tests = HashMap::with_capacity_and_hasher(n_tests, Default::default());
        for _ in 0..n_tests {
            let node = r.u64()?;
            let d = r.u32()?;
            tests.insert(node, d);
        }
        let n_leaves = r.count(12)?;
        let mut leaves = HashMap::with_capacity_and_hasher(n_leaves, Default::default());
        for _ in 0..n_leaves {
            let path = r.u64()?;
            let n = r.u32()? as usize;
            let mut bucket = Vec::with_capacity(n.min(bytes.len() / 8));
            for _ in 0..n {
                let landmark = LandmarkId(r.u32()?);
                let descriptor = r.u32()?;
                bucket.push(Entry { landmark, descriptor });
            }
            leaves.insert(path, bucket);
        }
        let tree = RandomTree::from_parts(
            TreeParams {
                depth,
                candidate_dims,
                seed,
            },
            dim,
            tests,
            leaves,
        )?;
        if tree.entry_count() != entry_count {
            return Err(Error::Container(format!(
                "tree holds {} entries, header says {entry_count}",
                tree.entry_count()
            )));
        }
        trees.push(tree);
    }
    if r.pos != bytes.len() {
        return Err(Error::Container("trailing bytes after last tree".into()));
    }
    Forest::from_parts(trees, forest_seed)
}
