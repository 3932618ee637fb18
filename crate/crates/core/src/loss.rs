//! Descriptor learning losses with analytic gradients.
//!
//! Three terms are provided: a hardest-in-batch triplet margin loss on L2
//! distance, a second-order similarity regularizer, and the same triplet form
//! evaluated with the weighted Hamming distance. [`total_loss`] sums them.
//! There is no training loop here; the gradients exist so the terms can be
//! checked against finite differences and plugged into an external trainer.

use crate::descriptor::{sign_bit, squared_l2, RealDescriptor};
use crate::error::{Error, Result};

/// Margin of the triplet terms.
pub const MARGIN: f64 = 1.0;

/// Default neighbor count of the second-order similarity term.
pub const DEFAULT_SOS_NEIGHBORS: usize = 8;

/// N matched pairs `(anchor_i, positive_i)` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorBatch {
    n: usize,
    dim: usize,
    anchors: Vec<f64>,
    positives: Vec<f64>,
}

impl DescriptorBatch {
    pub fn new(dim: usize, anchors: Vec<f64>, positives: Vec<f64>) -> Result<Self> {
        if dim == 0 || anchors.len() % dim != 0 || anchors.len() != positives.len() {
            return Err(Error::InvalidInput(format!(
                "batch buffers of length {} and {} do not hold whole {dim}-d rows",
                anchors.len(),
                positives.len()
            )));
        }
        let n = anchors.len() / dim;
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "batch needs at least 2 pairs, got {n}"
            )));
        }
        if anchors.iter().chain(&positives).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("batch contains non-finite values".into()));
        }
        Ok(Self {
            n,
            dim,
            anchors,
            positives,
        })
    }

    pub fn from_pairs(pairs: &[(RealDescriptor, RealDescriptor)]) -> Result<Self> {
        let dim = pairs.first().map_or(0, |p| p.0.dim());
        let mut anchors = Vec::with_capacity(pairs.len() * dim);
        let mut positives = Vec::with_capacity(pairs.len() * dim);
        for (a, p) in pairs {
            crate::error::check_dim(dim, a.dim())?;
            crate::error::check_dim(dim, p.dim())?;
            anchors.extend_from_slice(a.values());
            positives.extend_from_slice(p.values());
        }
        Self::new(dim, anchors, positives)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn positives(&self) -> &[f64] {
        &self.positives
    }

    pub fn anchors_mut(&mut self) -> &mut [f64] {
        &mut self.anchors
    }

    pub fn positives_mut(&mut self) -> &mut [f64] {
        &mut self.positives
    }

    fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i * self.dim..(i + 1) * self.dim]
    }

    fn positive(&self, i: usize) -> &[f64] {
        &self.positives[i * self.dim..(i + 1) * self.dim]
    }
}

/// Gradient with the same layout as the batch it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub anchors: Vec<f64>,
    pub positives: Vec<f64>,
}

impl LossGradient {
    fn zeros(batch: &DescriptorBatch) -> Self {
        Self {
            anchors: vec![0.0; batch.anchors.len()],
            positives: vec![0.0; batch.positives.len()],
        }
    }

    fn add(&mut self, other: &LossGradient) {
        for (a, b) in self.anchors.iter_mut().zip(&other.anchors) {
            *a += b;
        }
        for (a, b) in self.positives.iter_mut().zip(&other.positives) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.anchors.iter_mut().chain(self.positives.iter_mut()).for_each(|v| *v *= s);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub gradient: LossGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Metric {
    L2,
    /// Sign-mismatch indicator is held constant under differentiation.
    WeightedHamming,
}

impl Metric {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L2 => squared_l2(a, b).sqrt(),
            Metric::WeightedHamming => crate::descriptor::weighted_hamming_raw(a, b),
        }
    }

    /// Adds `scale * d(dist)/da` to `ga` and `scale * d(dist)/db` to `gb`.
    fn accumulate(self, a: &[f64], b: &[f64], dist: f64, scale: f64, ga: &mut [f64], gb: &mut [f64]) {
        if dist == 0.0 || scale == 0.0 {
            return;
        }
        for k in 0..a.len() {
            let w = match self {
                Metric::L2 => 1.0,
                Metric::WeightedHamming => {
                    if sign_bit(a[k]) != sign_bit(b[k]) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            let g = scale * w * (a[k] - b[k]) / dist;
            ga[k] += g;
            gb[k] -= g;
        }
    }
}

#[derive(Clone, Copy)]
enum Side {
    Anchor,
    Positive,
}

fn rows_mut(grad: &mut LossGradient, side: Side, i: usize, dim: usize) -> &mut [f64] {
    let buf = match side {
        Side::Anchor => &mut grad.anchors,
        Side::Positive => &mut grad.positives,
    };
    &mut buf[i * dim..(i + 1) * dim]
}

fn row(batch: &DescriptorBatch, side: Side, i: usize) -> &[f64] {
    match side {
        Side::Anchor => batch.anchor(i),
        Side::Positive => batch.positive(i),
    }
}

/// Adds the gradient of `dist(row(sa, i), row(sb, j))` scaled by `scale`.
fn accumulate_pair(
    metric: Metric,
    batch: &DescriptorBatch,
    grad: &mut LossGradient,
    (sa, i): (Side, usize),
    (sb, j): (Side, usize),
    dist: f64,
    scale: f64,
) {
    let dim = batch.dim;
    let a = row(batch, sa, i);
    let b = row(batch, sb, j);
    let mut ga = vec![0.0; dim];
    let mut gb = vec![0.0; dim];
    metric.accumulate(a, b, dist, scale, &mut ga, &mut gb);
    for (dst, g) in rows_mut(grad, sa, i, dim).iter_mut().zip(&ga) {
        *dst += g;
    }
    for (dst, g) in rows_mut(grad, sb, j, dim).iter_mut().zip(&gb) {
        *dst += g;
    }
}

fn triplet_form(batch: &DescriptorBatch, metric: Metric) -> LossValue {
    let n = batch.n;
    let mut grad = LossGradient::zeros(batch);
    let mut total = 0.0;
    for i in 0..n {
        let pos = metric.distance(batch.anchor(i), batch.positive(i));
        // Hardest negative over both directions; first minimum wins on ties.
        let mut neg = f64::INFINITY;
        let mut hardest = (Side::Anchor, Side::Positive, usize::MAX);
        for j in (0..n).filter(|&j| j != i) {
            let d_ap = metric.distance(batch.anchor(i), batch.positive(j));
            if d_ap < neg {
                neg = d_ap;
                hardest = (Side::Anchor, Side::Positive, j);
            }
            let d_pa = metric.distance(batch.positive(i), batch.anchor(j));
            if d_pa < neg {
                neg = d_pa;
                hardest = (Side::Positive, Side::Anchor, j);
            }
        }
        let hinge = MARGIN + pos - neg;
        if hinge > 0.0 {
            total += hinge;
            accumulate_pair(metric, batch, &mut grad, (Side::Anchor, i), (Side::Positive, i), pos, 1.0);
            let (own, other, j) = hardest;
            accumulate_pair(metric, batch, &mut grad, (own, i), (other, j), neg, -1.0);
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    LossValue {
        loss: total * inv,
        gradient: grad,
    }
}

/// Hardest-in-batch triplet margin loss on L2 distance.
pub fn triplet_margin_loss(batch: &DescriptorBatch) -> LossValue {
    triplet_form(batch, Metric::L2)
}

/// Triplet margin loss evaluated with the weighted Hamming distance.
pub fn weighted_hamming_loss(batch: &DescriptorBatch) -> LossValue {
    triplet_form(batch, Metric::WeightedHamming)
}

/// Indices of the `count` anchors nearest to anchor `i` (excluding `i`), ties by index.
fn nearest_anchors(batch: &DescriptorBatch, i: usize, count: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..batch.n)
        .filter(|&j| j != i)
        .map(|j| (squared_l2(batch.anchor(i), batch.anchor(j)), j))
        .collect();
    others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    others.truncate(count);
    others.into_iter().map(|(_, j)| j).collect()
}

/// Second-order similarity regularizer over the `neighbor_count` nearest
/// anchors of each anchor. Neighbor selection is held constant under
/// differentiation.
pub fn sos_regularizer(batch: &DescriptorBatch, neighbor_count: usize) -> Result<LossValue> {
    if neighbor_count >= batch.n {
        return Err(Error::InvalidInput(format!(
            "neighbor count {neighbor_count} must be below the batch size {}",
            batch.n
        )));
    }
    let n = batch.n;
    let mut grad = LossGradient::zeros(batch);
    let mut total = 0.0;
    for i in 0..n {
        let neighbors = nearest_anchors(batch, i, neighbor_count);
        let diffs: Vec<(usize, f64, f64, f64)> = neighbors
            .iter()
            .map(|&j| {
                let da = Metric::L2.distance(batch.anchor(i), batch.anchor(j));
                let dp = Metric::L2.distance(batch.positive(i), batch.positive(j));
                (j, da, dp, da - dp)
            })
            .collect();
        let term = diffs.iter().map(|d| d.3 * d.3).sum::<f64>().sqrt();
        total += term;
        if term == 0.0 {
            continue;
        }
        for &(j, da, dp, diff) in &diffs {
            let scale = diff / term;
            accumulate_pair(Metric::L2, batch, &mut grad, (Side::Anchor, i), (Side::Anchor, j), da, scale);
            accumulate_pair(Metric::L2, batch, &mut grad, (Side::Positive, i), (Side::Positive, j), dp, -scale);
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    Ok(LossValue {
        loss: total * inv,
        gradient: grad,
    })
}

/// Sum of the three terms with the given second-order neighbor count.
pub fn total_loss_with(batch: &DescriptorBatch, neighbor_count: usize) -> Result<LossValue> {
    let parts = [
        triplet_margin_loss(batch),
        sos_regularizer(batch, neighbor_count)?,
        weighted_hamming_loss(batch),
    ];
    let mut gradient = LossGradient::zeros(batch);
    let mut loss = 0.0;
    for p in &parts {
        loss += p.loss;
        gradient.add(&p.gradient);
    }
    Ok(LossValue { loss, gradient })
}

/// Sum of the three terms, using up to eight second-order neighbors.
pub fn total_loss(batch: &DescriptorBatch) -> Result<LossValue> {
    total_loss_with(batch, DEFAULT_SOS_NEIGHBORS.min(batch.n - 1))
}
