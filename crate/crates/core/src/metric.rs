//! Manifold distance and the batch-hard manifold triplet loss.
//!
//! Euclidean distances are passed through the piecewise activation
//! `d(x) = k x` for `x > r` and `x / k` for `x <= r`, where `r` is the mean
//! pairwise distance of the batch. For `k > 1` long distances are stretched
//! and short ones shrunk, so the activated distance no longer satisfies the
//! triangle inequality.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Substitute threshold when every embedding coincides.
pub const DEGENERATE_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldParams {
    /// Scale factor, `>= 1`.
    pub k: f64,
    /// Triplet margin.
    pub gamma: f64,
}

impl Default for ManifoldParams {
    fn default() -> Self {
        Self { k: 3.0, gamma: 0.3 }
    }
}

impl ManifoldParams {
    pub fn new(k: f64, gamma: f64) -> Result<Self> {
        let p = Self { k, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k >= 1.0) {
            return Err(Error::InvalidArgument(format!("scale factor k must be >= 1, got {}", self.k)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("margin must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Embedding vectors `[B, D]` with their class labels.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch<T> {
    pub vectors: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> EmbeddingBatch<T> {
    pub fn new(vectors: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if vectors.shape().len() != 2 || vectors.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for embeddings {:?}",
                labels.len(),
                vectors.shape()
            )));
        }
        if labels.len() < 2 {
            return Err(Error::InvalidArgument("an embedding batch needs at least two vectors".into()));
        }
        if !vectors.all_finite() {
            return Err(Error::InvalidArgument("non-finite embedding".into()));
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Activated distance: `k x` above the threshold, `x / k` at or below it.
pub fn manifold_distance<T: Scalar>(x: T, k: T, r: T) -> Result<T> {
    if x < T::zero() || x.is_nan() {
        return Err(Error::InvalidArgument(format!("distance must be non-negative, got {x}")));
    }
    if k < T::one() {
        return Err(Error::InvalidArgument(format!("scale factor k must be >= 1, got {k}")));
    }
    Ok(activate(x, k, r))
}

#[inline]
fn activate<T: Scalar>(x: T, k: T, r: T) -> T {
    if x > r {
        k * x
    } else {
        x / k
    }
}

/// Pairwise Euclidean distances `[B, B]`.
pub fn pairwise_distances<T: Scalar>(vectors: &Tensor<T>) -> Tensor<T> {
    let (b, d) = vectors.dims2();
    let v = vectors.data();
    let mut out = Tensor::zeros(&[b, b]);
    for i in 0..b {
        for j in (i + 1)..b {
            let s = (0..d).map(|c| (v[i * d + c] - v[j * d + c]).powi(2)).sum::<T>().sqrt();
            out.data_mut()[i * b + j] = s;
            out.data_mut()[j * b + i] = s;
        }
    }
    out
}

fn mean_upper<T: Scalar>(dist: &Tensor<T>) -> T {
    let (b, _) = dist.dims2();
    let mut sum = T::zero();
    for i in 0..b {
        for j in (i + 1)..b {
            sum = sum + dist.data()[i * b + j];
        }
    }
    sum / T::of((b * (b - 1) / 2) as f64)
}

/// Mean Euclidean distance over unordered pairs `i < j`.
pub fn batch_threshold<T: Scalar>(batch: &EmbeddingBatch<T>) -> Result<T> {
    if batch.len() < 2 {
        return Err(Error::InvalidArgument("threshold needs at least two embeddings".into()));
    }
    Ok(mean_upper(&pairwise_distances(&batch.vectors)))
}

/// Hardest positive and negative of one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinedPair {
    pub positive: usize,
    pub negative: usize,
}

/// Batch-hard mining. With `activation = Some((k, r))` candidates are ranked
/// by activated distance, otherwise by raw distance. Ties go to the lowest index.
pub fn mine_hardest<T: Scalar>(dist: &Tensor<T>, labels: &[usize], activation: Option<(T, T)>) -> Vec<Option<MinedPair>> {
    let (b, _) = dist.dims2();
    let score = |x: T| activation.map_or(x, |(k, r)| activate(x, k, r));
    (0..b)
        .map(|a| {
            let mut pos: Option<(usize, T)> = None;
            let mut neg: Option<(usize, T)> = None;
            for j in 0..b {
                if j == a {
                    continue;
                }
                let s = score(dist.data()[a * b + j]);
                if labels[j] == labels[a] {
                    if pos.is_none_or(|(_, best)| s > best) {
                        pos = Some((j, s));
                    }
                } else if neg.is_none_or(|(_, best)| s < best) {
                    neg = Some((j, s));
                }
            }
            match (pos, neg) {
                (Some((p, _)), Some((n, _))) => Some(MinedPair { positive: p, negative: n }),
                _ => None,
            }
        })
        .collect()
}

/// Batch-hard manifold triplet loss on the tape; `embeddings` is `[B, D]`.
///
/// The threshold is treated as a constant of the batch.
pub fn manifold_triplet_var<'t, T: Scalar>(embeddings: Var<'t, T>, labels: &[usize], params: ManifoldParams) -> Result<Var<'t, T>> {
    params.validate()?;
    let v = embeddings.value();
    if v.shape().len() != 2 || v.shape()[0] != labels.len() || labels.len() < 2 {
        return Err(Error::Shape(format!(
            "{} labels for embeddings {:?}",
            labels.len(),
            v.shape()
        )));
    }
    let (b, d) = v.dims2();
    let dist = pairwise_distances(&v);
    let mut r = mean_upper(&dist);
    if r <= T::zero() {
        r = T::of(DEGENERATE_THRESHOLD);
    }
    let (k, gamma) = (T::of(params.k), T::of(params.gamma));
    let mined = mine_hardest(&dist, labels, Some((k, r)));
    let valid = mined.iter().flatten().count();
    if valid == 0 {
        return Err(Error::NoValidAnchor);
    }
    let slope = move |x: T| if x > r { k } else { T::one() / k };
    // (anchor, positive, negative) of every anchor whose hinge is active.
    let mut active = Vec::new();
    let mut total = T::zero();
    for (a, m) in mined.iter().enumerate() {
        let Some(m) = m else { continue };
        let dp = dist.data()[a * b + m.positive];
        let dn = dist.data()[a * b + m.negative];
        let l = activate(dp, k, r) - activate(dn, k, r) + gamma;
        if l > T::zero() {
            total = total + l;
            active.push((a, m.positive, m.negative));
        }
    }
    let n_valid = T::of(valid as f64);
    Ok(embeddings.tape().op(
        Tensor::scalar(total / n_valid),
        &[embeddings],
        Box::new(move |g, _| {
            let s = g.data()[0] / n_valid;
            let mut gx = Tensor::zeros(&[b, d]);
            let vd = v.data();
            let mut push = |i: usize, j: usize, coef: T| {
                let dij = dist.data()[i * b + j];
                if dij <= T::zero() {
                    return;
                }
                let c = coef * slope(dij) / dij;
                for col in 0..d {
                    let diff = (vd[i * d + col] - vd[j * d + col]) * c;
                    gx.data_mut()[i * d + col] = gx.data()[i * d + col] + diff;
                    gx.data_mut()[j * d + col] = gx.data()[j * d + col] - diff;
                }
            };
            for &(a, p, n) in &active {
                push(a, p, s);
                push(a, n, -s);
            }
            vec![Some(gx)]
        }),
    ))
}

/// Batch-hard manifold triplet loss averaged over anchors that have both a
/// positive and a negative.
pub fn manifold_triplet_loss<T: Scalar>(batch: &EmbeddingBatch<T>, params: ManifoldParams) -> Result<T> {
    let tape = Tape::new();
    let v = tape.constant(batch.vectors.clone());
    Ok(manifold_triplet_var(v, &batch.labels, params)?.item())
}
