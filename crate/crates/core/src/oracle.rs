//! Straight-line reference implementations.
//!
//! Nothing here calls into the arithmetic it checks: densities, partitions
//! and losses are recomputed directly from raw parameters.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ade::{AdeConfig, Bandwidth, Centroid, CentroidSet, DEFAULT_BANDWIDTH_FLOOR};
use crate::net::{BatchTensors, Dense, TwoStageNet};
use crate::pruner::PruneDecision;
use crate::repr::Representation;

/// Worst-case agreement between an implementation and its oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct OracleReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub instances: usize,
    pub worst_seed: u64,
}

impl OracleReport {
    pub fn record(&mut self, seed: u64, got: f64, want: f64) {
        let abs = (got - want).abs();
        let rel = if abs == 0.0 { 0.0 } else { abs / want.abs().max(f64::MIN_POSITIVE) };
        if rel > self.max_relative_error {
            self.max_relative_error = rel;
            self.worst_seed = seed;
        }
        self.max_absolute_error = self.max_absolute_error.max(abs);
        self.instances += 1;
    }

    pub fn merge(&mut self, other: &OracleReport) {
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst_seed = other.worst_seed;
        }
        self.max_absolute_error = self.max_absolute_error.max(other.max_absolute_error);
        self.instances += other.instances;
    }
}

/// `sum_j (w_j / N_C) (2 pi)^(-D/2) |H|^(-1/2) exp(-1/2 sum_d (x_d - c_jd)^2 / h_d)`.
pub fn brute_force_density(x: &[f64], centroids: &[Vec<f64>], weights: &[f64], bandwidth: &[f64]) -> f64 {
    let d = x.len();
    let mut det = 1.0;
    for h in bandwidth {
        det *= h;
    }
    let norm = 1.0 / ((2.0 * PI).powf(d as f64 / 2.0) * det.sqrt());
    let n_c = centroids.len() as f64;
    let mut total = 0.0;
    for (c, w) in centroids.iter().zip(weights) {
        let mut quad = 0.0;
        for k in 0..d {
            let u = x[k] - c[k];
            quad += u * u / bandwidth[k];
        }
        total += w / n_c * norm * (-0.5 * quad).exp();
    }
    total
}

/// Full distance table, first minimum wins.
pub fn exhaustive_assign(batch: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let table: Vec<Vec<f64>> = batch
        .iter()
        .map(|x| {
            centroids
                .iter()
                .map(|c| x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum())
                .collect()
        })
        .collect();
    let mut partition = vec![Vec::new(); centroids.len()];
    for (i, row) in table.iter().enumerate() {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] < row[best] {
                best = j;
            }
        }
        partition[best].push(i);
    }
    partition
}

fn affine(layer: &Dense, x: &[f64]) -> Vec<f64> {
    let mut y = layer.bias.clone();
    for o in 0..layer.outputs {
        for k in 0..layer.inputs {
            y[o] += layer.weights[o * layer.inputs + k] * x[k];
        }
    }
    y
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|z| if z > 0.0 { z } else { 0.0 }).collect()
}

/// Shallow features recomputed row by row.
pub fn reference_shallow(net: &TwoStageNet, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    inputs.iter().map(|x| relu(affine(net.shallow(), x))).collect()
}

/// Per-sample cross-entropy of the deep stage on given features.
pub fn reference_deep_losses(net: &TwoStageNet, features: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let deep = net.deep();
    features
        .iter()
        .zip(labels)
        .map(|(f, &y)| {
            let mut a = f.clone();
            for (i, layer) in deep.iter().enumerate() {
                a = affine(layer, &a);
                if i + 1 < deep.len() {
                    a = relu(a);
                }
            }
            let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = a.iter().map(|z| (z - m).exp()).sum();
            m + s.ln() - a[y]
        })
        .collect()
}

/// Mean loss over the retained rows, recomputed end to end from the inputs.
pub fn reference_retained_loss(net: &TwoStageNet, batch: &BatchTensors, decision: &PruneDecision) -> f64 {
    let inputs: Vec<Vec<f64>> = decision.retained_indices.iter().map(|&i| batch.inputs.row(i).to_vec()).collect();
    let labels: Vec<usize> = decision.retained_indices.iter().map(|&i| batch.labels[i]).collect();
    let features = reference_shallow(net, &inputs);
    let losses = reference_deep_losses(net, &features, &labels);
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Central-difference gradient of the retained mean loss, flattened like
/// [`TwoStageNet::flat_params`].
pub fn finite_difference_grad(net: &TwoStageNet, batch: &BatchTensors, decision: &PruneDecision, step: f64) -> Vec<f64> {
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + step;
        probe.set_flat_params(&params).expect("same length");
        let up = reference_retained_loss(&probe, batch, decision);
        params[i] = base[i] - step;
        probe.set_flat_params(&params).expect("same length");
        let down = reference_retained_loss(&probe, batch, decision);
        params[i] = base[i];
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// A random small KDE problem: centroid set plus query points.
pub fn random_kde_instance(seed: u64, max_centroids: usize, max_dim: usize) -> (CentroidSet, Vec<Representation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_c = rng.random_range(1..=max_centroids);
    let dim = rng.random_range(1..=max_dim);
    let centroids: Vec<Centroid> = (0..n_c)
        .map(|_| Centroid {
            position: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            count: rng.random_range(1..50),
            weight: 0.0,
        })
        .collect();
    let mut set = CentroidSet::from_centroids(AdeConfig::new(n_c, dim), centroids, 1).expect("valid instance");
    set.update_weights();
    let bw: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05..2.0)).collect();
    set.set_bandwidth(Bandwidth::new(bw, DEFAULT_BANDWIDTH_FLOOR)).expect("matching dim");
    let queries = (0..8)
        .map(|_| Representation::new((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).expect("finite"))
        .collect();
    (set, queries)
}

/// Compares [`CentroidSet::estimate_density`] with [`brute_force_density`] on
/// every query of a set.
pub fn density_report(set: &CentroidSet, queries: &[Representation], seed: u64) -> OracleReport {
    let mut report = OracleReport::default();
    let Some(bw) = set.bandwidth() else {
        return report;
    };
    let positions: Vec<Vec<f64>> = set.centroids().iter().map(|c| c.position.clone()).collect();
    let weights: Vec<f64> = set.centroids().iter().map(|c| c.weight).collect();
    for q in queries {
        let got = set.estimate_density(q).expect("initialized set");
        let want = brute_force_density(q.values(), &positions, &weights, bw.diagonal());
        report.record(seed, got, want);
    }
    report
}
