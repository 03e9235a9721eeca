//! Weighted multi-vector distance and fused-vector construction.
//!
//! Fusing scales modality segment `m` by `sqrt(w_m)` and concatenates the
//! segments in schema order. Squared Euclidean distance is additive across
//! segments, so for fused vectors `F(q)`, `F(o)`:
//!
//! ```text
//! ‖F(q) − F(o)‖² = Σ_m w_m · ‖q_m − o_m‖²
//! ```
//!
//! That identity is what lets one graph over fused vectors answer weighted
//! multi-modal queries exactly.

mod learn;

pub use learn::{
    learn_weights, learn_weights_traced, load_triplets, loss, loss_gradient, softmax, LearnConfig,
    TrainingTriplet,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vectors::squared_l2;

const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Per-modality importance weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("weights must not be empty".into()));
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight {bad} is negative or not finite"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(modalities: usize) -> Self {
        assert!(modalities > 0, "at least one modality");
        Self(vec![1.0 / modalities as f64; modalities])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, m: usize) -> f64 {
        self.0[m]
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Segment boundaries of a fused vector: segment `m` spans
/// `bounds[m]..bounds[m + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedLayout {
    bounds: Vec<usize>,
}

impl FusedLayout {
    pub fn new(dims: &[usize]) -> Self {
        let mut bounds = Vec::with_capacity(dims.len() + 1);
        bounds.push(0);
        for d in dims {
            bounds.push(bounds.last().unwrap() + d);
        }
        Self { bounds }
    }

    /// A single segment covering the whole vector.
    pub fn single(dim: usize) -> Self {
        Self::new(&[dim])
    }

    pub fn segments(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn total_dim(&self) -> usize {
        *self.bounds.last().unwrap()
    }

    pub fn segment(&self, m: usize) -> std::ops::Range<usize> {
        self.bounds[m]..self.bounds[m + 1]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn split<'a>(&self, v: &'a [f32]) -> Vec<&'a [f32]> {
        (0..self.segments()).map(|m| &v[self.segment(m)]).collect()
    }
}

/// A fused vector together with its segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    pub data: Vec<f32>,
    pub layout: FusedLayout,
}

fn check_segments<A: AsRef<[f32]>, B: AsRef<[f32]>>(q: &[A], o: &[B], weights: usize) -> Result<()> {
    if q.len() != weights || o.len() != weights {
        return Err(Error::DimensionMismatch {
            expected: weights,
            actual: if q.len() != weights { q.len() } else { o.len() },
        });
    }
    for (a, b) in q.iter().zip(o) {
        let (a, b) = (a.as_ref(), b.as_ref());
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                actual: b.len(),
            });
        }
    }
    Ok(())
}

/// `Σ_m w_m · ‖q_m − o_m‖²`, accumulated in f64.
pub fn weighted_distance<A: AsRef<[f32]>, B: AsRef<[f32]>>(
    q: &[A],
    o: &[B],
    weights: &WeightVector,
) -> Result<f64> {
    check_segments(q, o, weights.len())?;
    Ok(q.iter()
        .zip(o)
        .zip(weights.as_slice())
        .map(|((a, b), w)| w * squared_gap(a.as_ref(), b.as_ref()))
        .sum())
}

pub(crate) fn squared_gap(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Concatenates `sqrt(w_m) · v_m` in schema order.
pub fn fuse<V: AsRef<[f32]>>(vectors: &[V], weights: &WeightVector) -> Result<FusedVector> {
    if vectors.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            actual: vectors.len(),
        });
    }
    let dims: Vec<usize> = vectors.iter().map(|v| v.as_ref().len()).collect();
    let layout = FusedLayout::new(&dims);
    let mut data = Vec::with_capacity(layout.total_dim());
    fuse_into(vectors, weights, &mut data);
    Ok(FusedVector { data, layout })
}

pub(crate) fn fuse_into<V: AsRef<[f32]>>(vectors: &[V], weights: &WeightVector, out: &mut Vec<f32>) {
    for (v, w) in vectors.iter().zip(weights.as_slice()) {
        let scale = w.sqrt() as f32;
        out.extend(v.as_ref().iter().map(|x| x * scale));
    }
}

/// Squared distance between two fused vectors.
pub fn fused_distance(a: &FusedVector, b: &FusedVector) -> Result<f32> {
    if a.layout != b.layout {
        return Err(Error::DimensionMismatch {
            expected: a.layout.total_dim(),
            actual: b.layout.total_dim(),
        });
    }
    Ok(squared_l2(&a.data, &b.data))
}
