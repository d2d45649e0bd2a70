//! Adaptive distribution estimation.
//!
//! A small set of streaming centroids summarises every retained representation
//! seen so far. Each centroid carries a lifetime assignment count and a
//! balancing weight proportional to that count; together with a diagonal
//! Gaussian bandwidth derived from the spread of the centroids they define a
//! weighted kernel density estimate
//!
//! ```text
//! f(x) = sum_j (w_j / N_C) * K_H(x - c_j)
//! K_H(u) = (2 pi)^(-D/2) |H|^(-1/2) exp(-1/2 sum_d u_d^2 / h_d)
//! ```
//!
//! The kernel is evaluated in log space; at `D = 128` the determinant alone
//! underflows a double.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PfbError, Result};
use crate::repr::Representation;

pub const DEFAULT_BANDWIDTH_FLOOR: f64 = 1e-12;
pub const DEFAULT_EMA_BETA: f64 = 0.01;

/// Rule used to derive the diagonal bandwidth from centroid positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    #[default]
    Silverman,
    Scott,
    Identity,
}

impl BandwidthRule {
    pub const ALL: [BandwidthRule; 3] = [Self::Silverman, Self::Scott, Self::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Self::Silverman => "silverman",
            Self::Scott => "scott",
            Self::Identity => "identity",
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandwidthRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "silverman" => Ok(Self::Silverman),
            "scott" => Ok(Self::Scott),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown bandwidth rule `{other}` (silverman|scott|identity)")),
        }
    }
}

/// How centroid positions absorb newly assigned samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CentroidUpdateMode {
    /// EMA blend divided by the sum of the blend weights actually used.
    #[default]
    Normalized,
    /// Blend divided by the updated lifetime count, exactly as printed.
    Literal,
}

impl fmt::Display for CentroidUpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Normalized => "normalized",
            Self::Literal => "literal",
        })
    }
}

impl FromStr for CentroidUpdateMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normalized" => Ok(Self::Normalized),
            "literal" => Ok(Self::Literal),
            other => Err(format!("unknown centroid update mode `{other}` (normalized|literal)")),
        }
    }
}

/// Diagonal of the kernel covariance `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    diagonal: Vec<f64>,
}

impl Bandwidth {
    /// Builds a bandwidth, flooring every entry at `floor`.
    pub fn new(diagonal: Vec<f64>, floor: f64) -> Self {
        let diagonal = diagonal
            .into_iter()
            .map(|h| if h.is_finite() && h > floor { h } else { floor })
            .collect();
        Self { diagonal }
    }

    pub fn identity(dim: usize) -> Self {
        Self { diagonal: vec![1.0; dim] }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    /// `ln |H|`.
    pub fn log_det(&self) -> f64 {
        self.diagonal.iter().map(|h| h.ln()).sum()
    }
}

/// Log of the multivariate normal kernel at `offset`.
pub fn log_kernel(offset: &[f64], bw: &Bandwidth) -> f64 {
    debug_assert_eq!(offset.len(), bw.dim());
    let quad: f64 = offset.iter().zip(&bw.diagonal).map(|(x, h)| x * x / h).sum();
    -0.5 * (offset.len() as f64) * (2.0 * PI).ln() - 0.5 * bw.log_det() - 0.5 * quad
}

/// Multivariate normal kernel. May round to zero for very distant offsets.
pub fn kernel(offset: &[f64], bw: &Bandwidth) -> f64 {
    log_kernel(offset, bw).exp()
}

fn population_std(positions: &[Vec<f64>], d: usize) -> f64 {
    let n = positions.len() as f64;
    let mean = positions.iter().map(|p| p[d]).sum::<f64>() / n;
    let var = positions.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Multiplier applied to `sigma_d` to obtain `sqrt(h_d)`; `None` for identity.
pub fn bandwidth_factor(rule: BandwidthRule, centroid_count: usize, dim: usize) -> Option<f64> {
    let n = centroid_count as f64;
    let d = dim as f64;
    match rule {
        BandwidthRule::Identity => None,
        BandwidthRule::Silverman => Some((4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0))),
        BandwidthRule::Scott => Some(n.powf(-1.0 / (d + 4.0))),
    }
}

/// Diagonal bandwidth from the spread of `positions` under `rule`.
///
/// Silverman: `sqrt(h_d) = (4 / ((D + 2) N))^(1 / (D + 4)) * sigma_d`.
/// Scott: `sqrt(h_d) = N^(-1 / (D + 4)) * sigma_d`.
/// Identity: `h_d = 1`.
pub fn compute_bandwidth(positions: &[Vec<f64>], rule: BandwidthRule, floor: f64) -> Bandwidth {
    assert!(!positions.is_empty(), "bandwidth needs at least one centroid");
    let dim = positions[0].len();
    let Some(factor) = bandwidth_factor(rule, positions.len(), dim) else {
        return Bandwidth::identity(dim);
    };
    let diag = (0..dim)
        .map(|k| {
            let root = factor * population_std(positions, k);
            root * root
        })
        .collect();
    Bandwidth::new(diag, floor)
}

/// A streaming summary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub position: Vec<f64>,
    /// Lifetime number of samples assigned here (seeding counts as one).
    pub count: u64,
    pub weight: f64,
}

/// Static parameters of the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdeConfig {
    pub centroid_count: usize,
    pub dim: usize,
    pub ema_beta: f64,
    pub bandwidth_rule: BandwidthRule,
    pub update_mode: CentroidUpdateMode,
    pub weight_ablation: bool,
    pub bandwidth_floor: f64,
}

impl AdeConfig {
    pub fn new(centroid_count: usize, dim: usize) -> Self {
        Self {
            centroid_count,
            dim,
            ema_beta: DEFAULT_EMA_BETA,
            bandwidth_rule: BandwidthRule::default(),
            update_mode: CentroidUpdateMode::default(),
            weight_ablation: false,
            bandwidth_floor: DEFAULT_BANDWIDTH_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroid_count == 0 {
            return Err(PfbError::InvalidConfig("centroid count must be positive".into()));
        }
        if self.dim == 0 {
            return Err(PfbError::InvalidConfig("representation dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_beta) {
            return Err(PfbError::InvalidConfig(format!("ema beta {} outside [0, 1]", self.ema_beta)));
        }
        if !(self.bandwidth_floor > 0.0 && self.bandwidth_floor.is_finite()) {
            return Err(PfbError::InvalidConfig("bandwidth floor must be positive".into()));
        }
        Ok(())
    }
}

/// Index lists `A_1..A_{N_C}`, one per centroid.
pub type Partition = Vec<Vec<usize>>;

/// Complete estimator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    config: AdeConfig,
    centroids: Vec<Centroid>,
    /// Seed candidates collected before initialization completes.
    pending: Vec<Vec<f64>>,
    bandwidth: Option<Bandwidth>,
    /// Number of update rounds since initialization.
    iteration: u64,
    /// Sum of all counts; the weight denominator.
    assigned_total: u64,
}

/// Result of feeding retained representations to [`CentroidSet::absorb`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbsorbOutcome {
    /// Representations consumed by seeding.
    pub seeded: usize,
    /// Representations assigned to centroids.
    pub assigned: usize,
}

impl CentroidSet {
    pub fn new(config: AdeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            centroids: Vec::new(),
            pending: Vec::new(),
            bandwidth: None,
            iteration: 0,
            assigned_total: 0,
        })
    }

    /// Builds an initialized set from explicit centroids, recomputing the
    /// bandwidth from their positions under the configured rule.
    pub fn from_centroids(config: AdeConfig, centroids: Vec<Centroid>, iteration: u64) -> Result<Self> {
        config.validate()?;
        if centroids.len() != config.centroid_count {
            return Err(PfbError::DimensionMismatch(format!(
                "expected {} centroids, got {}",
                config.centroid_count,
                centroids.len()
            )));
        }
        if let Some(c) = centroids.iter().find(|c| c.position.len() != config.dim) {
            return Err(PfbError::DimensionMismatch(format!(
                "centroid dim {} != configured dim {}",
                c.position.len(),
                config.dim
            )));
        }
        let assigned_total = centroids.iter().map(|c| c.count).sum();
        let mut set = Self {
            config,
            centroids,
            pending: Vec::new(),
            bandwidth: None,
            iteration,
            assigned_total,
        };
        set.refresh_bandwidth();
        Ok(set)
    }

    pub fn config(&self) -> &AdeConfig {
        &self.config
    }

    pub fn centroids(&self) -> &[Centroid] {
        &self.centroids
    }

    pub fn bandwidth(&self) -> Option<&Bandwidth> {
        self.bandwidth.as_ref()
    }

    pub fn is_initialized(&self) -> bool {
        self.bandwidth.is_some()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn assigned_total(&self) -> u64 {
        self.assigned_total
    }

    pub fn weight_sum(&self) -> f64 {
        self.centroids.iter().map(|c| c.weight).sum()
    }

    /// Overrides the bandwidth until the next refresh.
    pub fn set_bandwidth(&mut self, bw: Bandwidth) -> Result<()> {
        if bw.dim() != self.config.dim {
            return Err(PfbError::DimensionMismatch(format!(
                "bandwidth dim {} != configured dim {}",
                bw.dim(),
                self.config.dim
            )));
        }
        self.bandwidth = Some(bw);
        Ok(())
    }

    fn check_dim(&self, rep: &Representation) -> Result<()> {
        if rep.dim() != self.config.dim {
            return Err(PfbError::DimensionMismatch(format!(
                "representation dim {} != estimator dim {}",
                rep.dim(),
                self.config.dim
            )));
        }
        Ok(())
    }

    /// Collects seed candidates; the first `N_C` distinct ones become
    /// centroids with unit counts and uniform weights.
    ///
    /// Returns how many of `reps` were scanned. Once the last seed is taken
    /// the remaining inputs are left for the caller.
    pub fn initialize(&mut self, reps: &[Representation]) -> Result<usize> {
        let mut scanned = 0;
        for rep in reps {
            if self.is_initialized() {
                break;
            }
            self.check_dim(rep)?;
            scanned += 1;
            if !self.pending.iter().any(|p| p.as_slice() == rep.values()) {
                self.pending.push(rep.values().to_vec());
            }
            if self.pending.len() == self.config.centroid_count {
                let n = self.config.centroid_count;
                self.centroids = self
                    .pending
                    .drain(..)
                    .map(|position| Centroid { position, count: 1, weight: 1.0 / n as f64 })
                    .collect();
                self.assigned_total = n as u64;
                if self.config.weight_ablation {
                    self.centroids.iter_mut().for_each(|c| c.weight = 1.0);
                }
                self.refresh_bandwidth();
            }
        }
        Ok(scanned)
    }

    /// Balanced kernel density estimate at `x`.
    pub fn estimate_density(&self, x: &Representation) -> Result<f64> {
        let bw = self.bandwidth.as_ref().ok_or(PfbError::Uninitialized)?;
        self.check_dim(x)?;
        let n_c = self.centroids.len() as f64;
        let mut offset = vec![0.0; self.config.dim];
        let mut total = 0.0;
        for c in &self.centroids {
            for ((o, xv), cv) in offset.iter_mut().zip(x.values()).zip(&c.position) {
                *o = xv - cv;
            }
            total += (c.weight / n_c) * kernel(&offset, bw);
        }
        Ok(total)
    }

    /// Nearest-centroid partition; ties go to the lowest centroid index.
    pub fn assign(&self, batch: &[Representation]) -> Result<Partition> {
        if !self.is_initialized() {
            return Err(PfbError::Uninitialized);
        }
        let mut partition = vec![Vec::new(); self.centroids.len()];
        for (i, x) in batch.iter().enumerate() {
            self.check_dim(x)?;
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (j, c) in self.centroids.iter().enumerate() {
                let dist: f64 = x.values().iter().zip(&c.position).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best_dist {
                    best = j;
                    best_dist = dist;
                }
            }
            partition[best].push(i);
        }
        Ok(partition)
    }

    /// Blends assigned samples into their centroids and bumps counts.
    pub fn update_centroids(&mut self, partition: &Partition, batch: &[Representation]) -> Result<()> {
        if !self.is_initialized() {
            return Err(PfbError::Uninitialized);
        }
        if partition.len() != self.centroids.len() {
            return Err(PfbError::DimensionMismatch(format!(
                "partition has {} clusters, set has {}",
                partition.len(),
                self.centroids.len()
            )));
        }
        let beta = self.config.ema_beta;
        let mode = self.config.update_mode;
        let dim = self.config.dim;
        for (c, members) in self.centroids.iter_mut().zip(partition) {
            if members.is_empty() {
                continue;
            }
            let mut sum = vec![0.0; dim];
            for &i in members {
                let x = batch.get(i).ok_or_else(|| {
                    PfbError::DimensionMismatch(format!("partition index {i} outside batch of {}", batch.len()))
                })?;
                for (s, v) in sum.iter_mut().zip(x.values()) {
                    *s += v;
                }
            }
            let n_prev = c.count as f64;
            let added = members.len() as f64;
            let n_new = c.count + members.len() as u64;
            let denom = match mode {
                CentroidUpdateMode::Normalized => beta * n_prev + (1.0 - beta) * added,
                CentroidUpdateMode::Literal => n_new as f64,
            };
            for (p, s) in c.position.iter_mut().zip(&sum) {
                *p = (beta * n_prev * *p + (1.0 - beta) * s) / denom;
            }
            c.count = n_new;
            self.assigned_total += members.len() as u64;
        }
        self.iteration += 1;
        Ok(())
    }

    /// Weights proportional to lifetime counts, normalized by the total
    /// number of assigned samples; all ones under the weight ablation.
    pub fn update_weights(&mut self) {
        if self.config.weight_ablation {
            self.centroids.iter_mut().for_each(|c| c.weight = 1.0);
            return;
        }
        let total = self.assigned_total as f64;
        if total == 0.0 {
            return;
        }
        self.centroids.iter_mut().for_each(|c| c.weight = c.count as f64 / total);
    }

    /// Recomputes `H` from the current centroid positions.
    pub fn refresh_bandwidth(&mut self) {
        if self.centroids.is_empty() {
            return;
        }
        let positions: Vec<Vec<f64>> = self.centroids.iter().map(|c| c.position.clone()).collect();
        self.bandwidth = Some(compute_bandwidth(&positions, self.config.bandwidth_rule, self.config.bandwidth_floor));
    }

    /// One mutation round over retained representations: seed if needed,
    /// then assign, update centroids, rebuild weights and bandwidth.
    pub fn absorb(&mut self, reps: &[Representation]) -> Result<AbsorbOutcome> {
        let seeded = if self.is_initialized() { 0 } else { self.initialize(reps)? };
        let rest = &reps[seeded..];
        if !self.is_initialized() || rest.is_empty() {
            return Ok(AbsorbOutcome { seeded, assigned: 0 });
        }
        let partition = self.assign(rest)?;
        self.update_centroids(&partition, rest)?;
        self.update_weights();
        self.refresh_bandwidth();
        Ok(AbsorbOutcome { seeded, assigned: rest.len() })
    }

    /// Checks structural invariants, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let dim = self.config.dim;
        if self.is_initialized() && self.centroids.len() != self.config.centroid_count {
            return Err(PfbError::SchemaViolation("initialized set has wrong centroid count".into()));
        }
        if !self.is_initialized() && !self.centroids.is_empty() {
            return Err(PfbError::SchemaViolation("uninitialized set holds centroids".into()));
        }
        if self.pending.len() >= self.config.centroid_count.max(1) {
            return Err(PfbError::SchemaViolation("too many pending seeds".into()));
        }
        for c in &self.centroids {
            if c.position.len() != dim || c.position.iter().any(|v| !v.is_finite()) || !c.weight.is_finite() {
                return Err(PfbError::SchemaViolation("malformed centroid".into()));
            }
        }
        if self.pending.iter().any(|p| p.len() != dim) {
            return Err(PfbError::SchemaViolation("malformed pending seed".into()));
        }
        if let Some(bw) = &self.bandwidth {
            if bw.dim() != dim || bw.diagonal.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return Err(PfbError::SchemaViolation("malformed bandwidth".into()));
            }
        }
        if self.centroids.iter().map(|c| c.count).sum::<u64>() != self.assigned_total {
            return Err(PfbError::SchemaViolation("counts do not sum to assigned total".into()));
        }
        let total = self.assigned_total as f64;
        for c in &self.centroids {
            let expected = if self.config.weight_ablation { 1.0 } else { c.count as f64 / total };
            if (c.weight - expected).abs() > 1e-12 {
                return Err(PfbError::SchemaViolation("weights disagree with counts".into()));
            }
        }
        Ok(())
    }
}
