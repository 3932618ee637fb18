//! Local and global descriptor types plus the distance functions shared by
//! the index, the matcher and the loss terms.
//!
//! Real descriptors are unit length. On ingest a vector whose norm is within
//! [`NORM_TOLERANCE`] of one is kept bit-for-bit, a vector within
//! [`RENORMALIZE_LIMIT`] is rescaled, and anything further off is rejected as
//! corrupt.

use std::fmt;

use crate::error::{check_dim, Error, Result};

/// Largest accepted deviation of a stored descriptor norm from one.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Norm deviations up to this value are repaired by renormalizing.
pub const RENORMALIZE_LIMIT: f64 = 1e-2;

/// Default local descriptor dimension.
pub const DEFAULT_DIM: usize = 256;

fn unit_values(mut values: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidDescriptor(format!("{what} has no elements")));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidDescriptor(format!(
            "{what} element {k} is not finite"
        )));
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let deviation = (norm - 1.0).abs();
    if deviation <= NORM_TOLERANCE {
        return Ok(values);
    }
    if deviation > RENORMALIZE_LIMIT {
        return Err(Error::InvalidDescriptor(format!(
            "{what} norm {norm} is too far from 1"
        )));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(values)
}

fn normalize_any(mut values: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDescriptor(format!("{what} is not finite")));
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidDescriptor(format!("{what} is the zero vector")));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(values)
}

/// Unit-length real-valued local descriptor.
#[derive(Clone, PartialEq)]
pub struct RealDescriptor {
    values: Vec<f64>,
}

impl RealDescriptor {
    /// Builds a descriptor from stored values, applying the ingest norm policy.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            values: unit_values(values, "local descriptor")?,
        })
    }

    /// Scales an arbitrary nonzero vector to unit length.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            values: normalize_any(values, "local descriptor")?,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn binarize(&self) -> BinaryDescriptor {
        binarize(self)
    }
}

impl AsRef<[f64]> for RealDescriptor {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl fmt::Debug for RealDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealDescriptor(dim={})", self.values.len())
    }
}

/// Sign-binarized descriptor packed into 64-bit words, bit `k` of word `k / 64`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor {
    words: Vec<u64>,
    dim: usize,
}

impl BinaryDescriptor {
    pub fn zeros(dim: usize) -> Self {
        Self {
            words: vec![0; dim.div_ceil(64)],
            dim,
        }
    }

    pub fn ones(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        (0..dim).for_each(|k| out.set(k, true));
        out
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut out = Self::zeros(bits.len());
        for (k, &b) in bits.iter().enumerate() {
            out.set(k, b);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn bit(&self, k: usize) -> bool {
        debug_assert!(k < self.dim);
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    pub fn set(&mut self, k: usize, value: bool) {
        assert!(k < self.dim, "bit {k} out of range for dimension {}", self.dim);
        let mask = 1u64 << (k % 64);
        if value {
            self.words[k / 64] |= mask;
        } else {
            self.words[k / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

impl fmt::Debug for BinaryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = (0..self.dim)
            .map(|k| if self.bit(k) { '1' } else { '0' })
            .collect();
        write!(f, "BinaryDescriptor({bits})")
    }
}

/// Unit-length whole-image descriptor used for frame retrieval.
#[derive(Clone, PartialEq)]
pub struct GlobalDescriptor {
    values: Vec<f64>,
}

impl GlobalDescriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            values: unit_values(values, "global descriptor")?,
        })
    }

    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            values: normalize_any(values, "global descriptor")?,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl fmt::Debug for GlobalDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GlobalDescriptor(dim={})", self.values.len())
    }
}

/// Sign rule shared by binarization and the weighted Hamming mismatch: zero maps to 1.
#[inline]
pub fn sign_bit(value: f64) -> bool {
    value >= 0.0
}

pub(crate) fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l2_distance(a: &RealDescriptor, b: &RealDescriptor) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(squared_l2(&a.values, &b.values).sqrt())
}

pub fn binarize(a: &RealDescriptor) -> BinaryDescriptor {
    let mut out = BinaryDescriptor::zeros(a.dim());
    for (k, &v) in a.values.iter().enumerate() {
        if sign_bit(v) {
            out.words[k / 64] |= 1u64 << (k % 64);
        }
    }
    out
}

pub fn hamming_distance(a: &BinaryDescriptor, b: &BinaryDescriptor) -> Result<u32> {
    check_dim(a.dim, b.dim)?;
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

/// Weighted Hamming distance on raw slices: the squared element difference
/// counts only where the two sign bits disagree.
pub(crate) fn weighted_hamming_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| sign_bit(**x) != sign_bit(**y))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn weighted_hamming_distance(a: &RealDescriptor, b: &RealDescriptor) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(weighted_hamming_raw(&a.values, &b.values))
}

pub fn global_l2_distance(a: &GlobalDescriptor, b: &GlobalDescriptor) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(squared_l2(&a.values, &b.values).sqrt())
}
