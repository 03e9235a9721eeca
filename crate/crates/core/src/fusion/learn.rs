//! Contrastive learning of modality weights.
//!
//! Weights are `w = softmax(θ)` and the objective is the triplet hinge loss
//! over the weighted distance:
//!
//! ```text
//! L(θ) = Σ_t max(0, margin + D_w(q_t, pos_t) − D_w(q_t, neg_t))
//! ```
//!
//! `D_w` is linear in `w`, so each triplet reduces to one per-modality gap
//! vector `g_t[m] = ‖q_m − pos_m‖² − ‖q_m − neg_m‖²` computed once up front.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{squared_gap, WeightVector};
use crate::catalog::ModalitySpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriplet {
    pub query: Vec<Vec<f32>>,
    pub positive: Vec<Vec<f32>>,
    pub negative: Vec<Vec<f32>>,
}

impl TrainingTriplet {
    fn gaps(&self) -> Result<Vec<f64>> {
        let m = self.query.len();
        if self.positive.len() != m || self.negative.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: self.positive.len().min(self.negative.len()),
            });
        }
        (0..m)
            .map(|i| {
                let (q, p, n) = (&self.query[i], &self.positive[i], &self.negative[i]);
                if p.len() != q.len() || n.len() != q.len() {
                    return Err(Error::DimensionMismatch {
                        expected: q.len(),
                        actual: if p.len() != q.len() { p.len() } else { n.len() },
                    });
                }
                Ok(squared_gap(q, p) - squared_gap(q, n))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            lr: 0.05,
            epochs: 100,
        }
    }
}

pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn all_gaps(triplets: &[TrainingTriplet]) -> Result<Vec<Vec<f64>>> {
    if triplets.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let gaps = triplets.iter().map(TrainingTriplet::gaps).collect::<Result<Vec<_>>>()?;
    let m = gaps[0].len();
    if m == 0 {
        return Err(Error::InvalidParameter("triplets carry no modalities".into()));
    }
    if let Some(bad) = gaps.iter().find(|g| g.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: bad.len(),
        });
    }
    Ok(gaps)
}

fn hinge_terms<'a>(w: &'a [f64], gaps: &'a [Vec<f64>], margin: f64) -> impl Iterator<Item = (f64, &'a [f64])> {
    gaps.iter().map(move |g| {
        let z = margin + g.iter().zip(w).map(|(g, w)| g * w).sum::<f64>();
        (z, g.as_slice())
    })
}

fn loss_from_gaps(theta: &[f64], gaps: &[Vec<f64>], margin: f64) -> f64 {
    let w = softmax(theta);
    hinge_terms(&w, gaps, margin).map(|(z, _)| z.max(0.0)).sum()
}

fn gradient_from_gaps(theta: &[f64], gaps: &[Vec<f64>], margin: f64) -> Vec<f64> {
    let w = softmax(theta);
    // dL/dw_m: sum of gaps over triplets whose hinge is active
    let mut dw = vec![0.0; w.len()];
    for (z, g) in hinge_terms(&w, gaps, margin) {
        if z > 0.0 {
            for (d, g) in dw.iter_mut().zip(g) {
                *d += g;
            }
        }
    }
    // softmax Jacobian: dL/dθ_j = w_j · (dL/dw_j − Σ_m w_m dL/dw_m)
    let mean: f64 = w.iter().zip(&dw).map(|(w, d)| w * d).sum();
    w.iter().zip(&dw).map(|(w, d)| w * (d - mean)).collect()
}

/// Hinge loss at `θ`.
pub fn loss(theta: &[f64], triplets: &[TrainingTriplet], margin: f64) -> Result<f64> {
    let gaps = all_gaps(triplets)?;
    check_theta(theta, &gaps)?;
    Ok(loss_from_gaps(theta, &gaps, margin))
}

/// Analytic gradient of the hinge loss with respect to `θ`. Triplets sitting
/// exactly on the hinge contribute nothing.
pub fn loss_gradient(theta: &[f64], triplets: &[TrainingTriplet], margin: f64) -> Result<Vec<f64>> {
    let gaps = all_gaps(triplets)?;
    check_theta(theta, &gaps)?;
    Ok(gradient_from_gaps(theta, &gaps, margin))
}

fn check_theta(theta: &[f64], gaps: &[Vec<f64>]) -> Result<()> {
    if theta.len() != gaps[0].len() {
        return Err(Error::DimensionMismatch {
            expected: gaps[0].len(),
            actual: theta.len(),
        });
    }
    Ok(())
}

pub fn learn_weights(triplets: &[TrainingTriplet], config: &LearnConfig) -> Result<WeightVector> {
    learn_weights_traced(triplets, config).map(|(w, _)| w)
}

const MAX_HALVINGS: usize = 30;

/// Full-batch gradient descent from uniform weights, halving the step
/// whenever the full step would raise the loss. Also returns the loss
/// before the first step and after every epoch (`epochs + 1` values).
pub fn learn_weights_traced(
    triplets: &[TrainingTriplet],
    config: &LearnConfig,
) -> Result<(WeightVector, Vec<f64>)> {
    let gaps = all_gaps(triplets)?;
    let mut theta = vec![0.0; gaps[0].len()];
    let mut history = Vec::with_capacity(config.epochs + 1);
    history.push(loss_from_gaps(&theta, &gaps, config.margin));
    let mut current = history[0];
    for _ in 0..config.epochs {
        let grad = gradient_from_gaps(&theta, &gaps, config.margin);
        // A full step can jump across a hinge kink and raise the loss; halve
        // it until it does not, or give up and stay put for this epoch.
        let mut step = config.lr;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let l = loss_from_gaps(&trial, &gaps, config.margin);
            if l <= current {
                theta = trial;
                current = l;
                break;
            }
            step *= 0.5;
        }
        history.push(current);
    }
    let mut w = softmax(&theta);
    // renormalize so rounding never pushes the sum off the simplex
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    Ok((WeightVector::new(w)?, history))
}

#[derive(Debug, Deserialize)]
struct TripletRecord {
    q: BTreeMap<String, Vec<f32>>,
    pos: BTreeMap<String, Vec<f32>>,
    neg: BTreeMap<String, Vec<f32>>,
}

/// Reads a JSON-lines triplet file. Modalities absent from a record are zero
/// vectors; present ones must match the schema dimension.
pub fn load_triplets(path: impl AsRef<Path>, schema: &[ModalitySpec]) -> Result<Vec<TrainingTriplet>> {
    let file = fs::File::open(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let record: TripletRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let side = |map: &BTreeMap<String, Vec<f32>>| -> Result<Vec<Vec<f32>>> {
            if let Some(name) = map.keys().find(|k| !schema.iter().any(|m| &m.name == *k)) {
                return Err(parse_err(format!("unknown modality {name:?}")));
            }
            schema
                .iter()
                .map(|m| match map.get(&m.name) {
                    Some(v) if v.len() != m.dimension => Err(parse_err(format!(
                        "modality {:?} has {} dims, expected {}",
                        m.name,
                        v.len(),
                        m.dimension
                    ))),
                    Some(v) => Ok(v.clone()),
                    None => Ok(vec![0.0; m.dimension]),
                })
                .collect()
        };
        out.push(TrainingTriplet {
            query: side(&record.q)?,
            positive: side(&record.pos)?,
            negative: side(&record.neg)?,
        });
    }
    Ok(out)
}
