//! Probability-density importance and per-batch pruning.
//!
//! A sample's importance is `1 / (f(x) + r)` where `f` is the balanced KDE
//! and `r = alpha * max_batch f`, `alpha ~ U(0, b)` drawn independently for
//! each sample. The `floor(p * N_B)` least important samples are pruned.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ade::CentroidSet;
use crate::error::{PfbError, Result};
use crate::repr::Representation;

pub const DEFAULT_RANDOM_BOUND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub value: f64,
    pub density: f64,
    pub offset: f64,
}

/// `1 / (density + offset)`.
pub fn importance(density: f64, offset: f64) -> f64 {
    1.0 / (density + offset)
}

/// Scores from precomputed densities and per-sample `alpha` draws.
pub fn scores_from_densities(densities: &[f64], alphas: &[f64]) -> Vec<ImportanceScore> {
    debug_assert_eq!(densities.len(), alphas.len());
    let f_max = densities.iter().copied().fold(0.0, f64::max);
    densities
        .iter()
        .zip(alphas)
        .map(|(&density, &alpha)| {
            let offset = alpha * f_max;
            let value = if f_max > 0.0 { importance(density, offset) } else { 1.0 };
            ImportanceScore { value, density, offset }
        })
        .collect()
}

/// Draws one `alpha ~ U(0, b)` per sample, in index order.
pub fn draw_alphas<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * bound).collect()
}

/// Importance of every sample in a batch against a fixed estimator snapshot.
///
/// The alphas are drawn sequentially before the densities are evaluated in
/// parallel, so results do not depend on the worker count.
pub fn score_batch<R: Rng + ?Sized>(
    reps: &[Representation],
    set: &CentroidSet,
    bound: f64,
    rng: &mut R,
) -> Result<Vec<ImportanceScore>> {
    if !set.is_initialized() {
        return Err(PfbError::Uninitialized);
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(PfbError::InvalidConfig(format!("random bound must be positive, got {bound}")));
    }
    let alphas = draw_alphas(reps.len(), bound, rng);
    let densities = reps
        .par_iter()
        .map(|x| set.estimate_density(x))
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores_from_densities(&densities, &alphas))
}

/// Number of samples pruned from a batch of `n` at ratio `p`.
///
/// The small slack keeps decimal ratios such as `0.29 * 100` from flooring
/// one short.
pub fn pruned_count(p: f64, n: usize) -> usize {
    let k = (p * n as f64 + 1e-9).floor();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    /// `true` marks a pruned sample.
    pub mask: Vec<bool>,
    pub threshold: f64,
    pub retained_indices: Vec<usize>,
    pub scores: Vec<ImportanceScore>,
}

impl PruneDecision {
    /// Decision that retains every sample of a batch of `n`.
    pub fn keep_all(n: usize) -> Self {
        Self {
            mask: vec![false; n],
            threshold: f64::NEG_INFINITY,
            retained_indices: (0..n).collect(),
            scores: Vec::new(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.mask.len()
    }

    pub fn pruned_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn retained_count(&self) -> usize {
        self.retained_indices.len()
    }

    pub fn mean_importance(&self) -> f64 {
        if self.scores.is_empty() {
            return f64::NAN;
        }
        self.scores.iter().map(|s| s.value).sum::<f64>() / self.scores.len() as f64
    }
}

/// Prunes the `floor(p * N_B)` lowest scores; ties prune the lower index first.
pub fn prune(scores: Vec<ImportanceScore>, p: f64) -> Result<PruneDecision> {
    if scores.is_empty() {
        return Err(PfbError::ShapeMismatch("cannot prune an empty batch".into()));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(PfbError::InvalidConfig(format!("prune ratio {p} outside [0, 1)")));
    }
    let n = scores.len();
    let k = pruned_count(p, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].value.total_cmp(&scores[b].value).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..k] {
        mask[i] = true;
    }
    let threshold = if k == 0 { f64::NEG_INFINITY } else { scores[order[k - 1]].value };
    let retained_indices = (0..n).filter(|&i| !mask[i]).collect();
    Ok(PruneDecision { mask, threshold, retained_indices, scores })
}
