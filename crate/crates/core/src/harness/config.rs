use serde::{Deserialize, Serialize};

use crate::ade::{AdeConfig, BandwidthRule, CentroidUpdateMode, DEFAULT_BANDWIDTH_FLOOR, DEFAULT_EMA_BETA};
use crate::error::{PfbError, Result};
use crate::harness::data::MixtureSpec;
use crate::net::NetDims;
use crate::pruner::DEFAULT_RANDOM_BOUND;

/// Everything needed to reproduce a run.
///
/// Unset keys fall back to the defaults below. Pruning-side defaults follow
/// the reference training recipe (`b = 0.01`, `N_C = 64`, `beta = 0.01`,
/// pruning from epoch 5 of 200 until epoch 180), scaled to a short run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub prune_ratio: f64,
    pub batch_size: usize,
    pub centroids: usize,
    /// Representation dim `D`; must divide `feature_dim`.
    pub dim: usize,
    pub random_bound: f64,
    pub ema_beta: f64,
    pub bandwidth_rule: BandwidthRule,
    pub centroid_update_mode: CentroidUpdateMode,
    pub weight_ablation: bool,
    pub epochs: usize,
    pub start_prune_epoch: usize,
    pub stop_prune_epoch: usize,
    pub learning_rate: f64,
    pub seed: u64,

    pub input_dim: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
    pub deep_hidden_layers: usize,

    /// Seed for the synthetic dataset; `seed` when unset.
    pub data_seed: Option<u64>,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Distance of every component mean from the origin.
    pub separation: f64,
    /// Per-dimension variance of every component.
    pub spread: f64,
    /// Mixture weight of the last component; 0 means equal weights.
    pub minority_weight: f64,
    /// Draw the held-out set with equal component weights.
    pub balanced_test: bool,
    /// Explicit mixture overriding the generated one.
    pub mixture: Option<MixtureSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            prune_ratio: 0.3,
            batch_size: 64,
            centroids: 64,
            dim: 8,
            random_bound: DEFAULT_RANDOM_BOUND,
            ema_beta: DEFAULT_EMA_BETA,
            bandwidth_rule: BandwidthRule::Silverman,
            centroid_update_mode: CentroidUpdateMode::Normalized,
            weight_ablation: false,
            epochs: 20,
            start_prune_epoch: 1,
            stop_prune_epoch: 18,
            learning_rate: 0.05,
            seed: 0,
            input_dim: 8,
            feature_dim: 16,
            hidden_dim: 16,
            class_count: 4,
            deep_hidden_layers: 1,
            data_seed: None,
            train_samples: 4096,
            test_samples: 1024,
            separation: 3.0,
            spread: 1.0,
            minority_weight: 0.0,
            balanced_test: false,
            mixture: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PfbError::InvalidConfig(msg));
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return bad(format!("prune_ratio {} outside [0, 1)", self.prune_ratio));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.dim == 0 || self.dim > self.feature_dim || !self.feature_dim.is_multiple_of(self.dim) {
            return bad(format!("dim {} must divide feature_dim {}", self.dim, self.feature_dim));
        }
        if !(self.random_bound > 0.0 && self.random_bound.is_finite()) {
            return bad(format!("random_bound must be positive, got {}", self.random_bound));
        }
        if !(self.start_prune_epoch <= self.stop_prune_epoch && self.stop_prune_epoch <= self.epochs) {
            return bad(format!(
                "need start_prune_epoch <= stop_prune_epoch <= epochs, got {} / {} / {}",
                self.start_prune_epoch, self.stop_prune_epoch, self.epochs
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.train_samples < self.batch_size {
            return bad(format!(
                "train_samples {} smaller than one batch of {}",
                self.train_samples, self.batch_size
            ));
        }
        if !(self.separation.is_finite() && self.spread > 0.0 && self.spread.is_finite()) {
            return bad("separation must be finite and spread positive".into());
        }
        if !(0.0..1.0).contains(&self.minority_weight) {
            return bad(format!("minority_weight {} outside [0, 1)", self.minority_weight));
        }
        self.net_dims().validate()?;
        self.ade_config().validate()?;
        if let Some(m) = &self.mixture {
            m.validate()?;
            if m.dim() != self.input_dim {
                return bad(format!("mixture dim {} != input_dim {}", m.dim(), self.input_dim));
            }
            if m.labels.iter().any(|&l| l >= self.class_count) {
                return bad("mixture label outside class_count".into());
            }
        }
        Ok(())
    }

    pub fn net_dims(&self) -> NetDims {
        NetDims {
            input_dim: self.input_dim,
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            class_count: self.class_count,
            deep_hidden_layers: self.deep_hidden_layers,
        }
    }

    pub fn ade_config(&self) -> AdeConfig {
        AdeConfig {
            centroid_count: self.centroids,
            dim: self.dim,
            ema_beta: self.ema_beta,
            bandwidth_rule: self.bandwidth_rule,
            update_mode: self.centroid_update_mode,
            weight_ablation: self.weight_ablation,
            bandwidth_floor: DEFAULT_BANDWIDTH_FLOOR,
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Whether pruning is scheduled for `epoch`.
    pub fn in_prune_window(&self, epoch: usize) -> bool {
        epoch >= self.start_prune_epoch && epoch < self.stop_prune_epoch
    }

    /// Training mixture: explicit, or one component per class.
    pub fn train_mixture(&self) -> MixtureSpec {
        if let Some(m) = &self.mixture {
            let mut m = m.clone();
            m.sample_count = self.train_samples;
            return m;
        }
        MixtureSpec::generated(
            self.class_count,
            self.input_dim,
            self.separation,
            self.spread,
            self.minority_weight,
            self.train_samples,
            self.data_seed(),
        )
    }

    pub fn test_mixture(&self) -> MixtureSpec {
        let mut m = self.train_mixture();
        m.sample_count = self.test_samples;
        if self.balanced_test {
            let k = m.weights.len();
            m.weights = vec![1.0 / k as f64; k];
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields() {
        let cases: Vec<Box<dyn Fn(&mut RunConfig)>> = vec![
            Box::new(|c| c.prune_ratio = 1.0),
            Box::new(|c| c.dim = 5),
            Box::new(|c| c.dim = 32),
            Box::new(|c| c.start_prune_epoch = 19),
            Box::new(|c| c.stop_prune_epoch = 21),
            Box::new(|c| c.random_bound = 0.0),
            Box::new(|c| c.centroids = 0),
            Box::new(|c| c.batch_size = 0),
            Box::new(|c| c.train_samples = 10),
        ];
        for mutate in cases {
            let mut c = RunConfig::default();
            mutate(&mut c);
            assert!(matches!(c.validate(), Err(PfbError::InvalidConfig(_))), "{c:?}");
        }
    }

    #[test]
    fn partial_json_takes_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"prune_ratio": 0.5, "bandwidth_rule": "scott"}"#).unwrap();
        assert_eq!(c.prune_ratio, 0.5);
        assert_eq!(c.bandwidth_rule, BandwidthRule::Scott);
        assert_eq!(c.batch_size, RunConfig::default().batch_size);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
