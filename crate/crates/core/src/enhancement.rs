//! Importance enhancement. Each modality's feature is normalised by running
//! statistics, a per-dimension softmax over modalities of the normalised
//! magnitudes gives importance coefficients λ, and the fused state is the
//! concatenation of `λ ⊙ f`. λ, μ and σ enter the graph as constants.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_XI: f64 = 0.05;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Running mean and variance of one modality's features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityStats {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub xi: f64,
    pub eps: f64,
}

impl ModalityStats {
    /// μ = 0, σ = 1.
    pub fn new(dim: usize, xi: f64, eps: f64) -> Self {
        ModalityStats { mu: vec![0.0; dim], var: vec![1.0; dim], xi, eps }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(Error::Config(format!("xi must lie in (0, 1], got {}", self.xi)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    /// `(f - μ) / sqrt(σ + ε)` on plain values; `f` may hold several rows.
    pub fn normalize_values(&self, f: &[f64]) -> Vec<f64> {
        let d = self.dim();
        f.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mu[i % d]) / (self.var[i % d] + self.eps).sqrt())
            .collect()
    }
}

/// Soft update from a mini-batch of `[dim]` rows: population mean and
/// variance of the batch, blended in with weight ξ.
pub fn update_stats(batch: &[&[f64]], stats: &ModalityStats) -> Result<ModalityStats> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("update_stats"));
    }
    let d = stats.dim();
    if let Some(bad) = batch.iter().find(|r| r.len() != d) {
        return Err(Error::Config(format!("batch row of length {} for stats of dimension {d}", bad.len())));
    }
    let n = batch.len() as f64;
    let mut mean = vec![0.0; d];
    for row in batch {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for row in batch {
        for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let xi = stats.xi;
    Ok(ModalityStats {
        mu: mean.iter().zip(&stats.mu).map(|(b, old)| xi * b + (1.0 - xi) * old).collect(),
        var: var.iter().zip(&stats.var).map(|(b, old)| xi * b + (1.0 - xi) * old).collect(),
        xi,
        eps: stats.eps,
    })
}

/// Normalises a `[L]` or `[T, L]` feature in the graph. Gradients reach `f`
/// only, through the constant affine map.
pub fn normalize(g: &mut Graph, f: Var, stats: &ModalityStats) -> Result<Var> {
    let shape = g.shape(f).to_vec();
    let d = stats.dim();
    if shape.last() != Some(&d) {
        return Err(Error::Config(format!("feature {:?} does not match stats of dimension {d}", shape)));
    }
    let n: usize = shape.iter().product();
    let mu: Vec<f64> = (0..n).map(|i| stats.mu[i % d]).collect();
    let inv: Vec<f64> = (0..n).map(|i| 1.0 / (stats.var[i % d] + stats.eps).sqrt()).collect();
    let mu = g.constant(Tensor::new(shape.clone(), mu)?);
    let inv = g.constant(Tensor::new(shape, inv)?);
    let centred = g.sub(f, mu)?;
    Ok(g.mul(centred, inv)?)
}

/// Per-position softmax across modalities of `|f̂|`. All inputs must have
/// equal length; any number of rows may be stacked.
pub fn importance(normalized: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = normalized.first() else {
        return Err(Error::EmptyBatch("importance"));
    };
    let n = first.len();
    if normalized.iter().any(|f| f.len() != n) {
        return Err(Error::Config("importance over features of different lengths".into()));
    }
    let mut out = vec![vec![0.0; n]; normalized.len()];
    for l in 0..n {
        let top = normalized.iter().map(|f| f[l].abs()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = normalized.iter().map(|f| (f[l].abs() - top).exp()).sum();
        for (m, f) in normalized.iter().enumerate() {
            out[m][l] = (f[l].abs() - top).exp() / z;
        }
    }
    Ok(out)
}

/// `concat(λ^m ⊙ f^m)` along the last axis; λ enters as a constant.
pub fn fuse(g: &mut Graph, raw: &[Var], lambda: &[Vec<f64>]) -> Result<Var> {
    if raw.len() != lambda.len() || raw.is_empty() {
        return Err(Error::Config(format!("{} features but {} coefficient sets", raw.len(), lambda.len())));
    }
    let mut parts = Vec::with_capacity(raw.len());
    for (&f, lam) in raw.iter().zip(lambda) {
        let w = g.constant(Tensor::new(g.shape(f).to_vec(), lam.clone())?);
        parts.push(g.mul(f, w)?);
    }
    let axis = g.shape(raw[0]).len() - 1;
    Ok(g.concat(&parts, axis)?)
}

/// `concat(w^m · f^m)` with one scalar weight per modality.
pub fn fixed_weight_fuse(g: &mut Graph, raw: &[Var], weights: &[f64]) -> Result<Var> {
    if raw.len() != weights.len() || raw.is_empty() {
        return Err(Error::Config(format!("{} features but {} weights", raw.len(), weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Config(format!("fixed weight {w} outside [0, 1]")));
    }
    let mut parts = Vec::with_capacity(raw.len());
    for (&f, &w) in raw.iter().zip(weights) {
        parts.push(g.scale(f, w)?);
    }
    let axis = g.shape(raw[0]).len() - 1;
    Ok(g.concat(&parts, axis)?)
}

/// Every intermediate of the enhancement step for one set of features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub weighted: Vec<Vec<f64>>,
    pub fused: Vec<f64>,
}

impl FeatureBundle {
    pub fn compute(raw: Vec<Vec<f64>>, stats: &[ModalityStats]) -> Result<Self> {
        if raw.len() != stats.len() {
            return Err(Error::Config(format!("{} features but {} stats", raw.len(), stats.len())));
        }
        let normalized: Vec<Vec<f64>> = raw.iter().zip(stats).map(|(f, s)| s.normalize_values(f)).collect();
        let refs: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
        let lambda = importance(&refs)?;
        let weighted: Vec<Vec<f64>> =
            raw.iter().zip(&lambda).map(|(f, l)| f.iter().zip(l).map(|(a, b)| a * b).collect()).collect();
        let fused = weighted.concat();
        Ok(FeatureBundle { raw, normalized, lambda, weighted, fused })
    }

    /// Mean of λ over dimensions, one value per modality.
    pub fn mean_lambda(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l.iter().sum::<f64>() / l.len() as f64).collect()
    }
}
