//! Synthetic Gaussian-mixture datasets.
//!
//! Every sample carries the index of the mixture component that generated
//! it. The tag only feeds retention diagnostics; the pruner never sees it.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PfbError, Result};
use crate::net::Matrix;

const MEANS_STREAM: u64 = 7;

/// Diagonal Gaussian mixture with one class label per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub sample_count: usize,
}

impl MixtureSpec {
    /// `components` means at distance `separation` from the origin in random
    /// directions; component `k` is labelled `k`. A positive `minority_weight`
    /// goes to the last component and the rest share the remainder.
    pub fn generated(
        components: usize,
        dim: usize,
        separation: f64,
        spread: f64,
        minority_weight: f64,
        sample_count: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(MEANS_STREAM);
        let means = (0..components)
            .map(|_| {
                let dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.into_iter().map(|v| v / norm * separation).collect()
            })
            .collect();
        let weights = if minority_weight > 0.0 && components > 1 {
            let rest = (1.0 - minority_weight) / (components - 1) as f64;
            (0..components).map(|k| if k + 1 == components { minority_weight } else { rest }).collect()
        } else {
            vec![1.0 / components as f64; components]
        };
        Self {
            means,
            variances: vec![vec![spread; dim]; components],
            weights,
            labels: (0..components).collect(),
            sample_count,
        }
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        let bad = |msg: &str| Err(PfbError::InvalidConfig(format!("mixture: {msg}")));
        if k == 0 {
            return bad("no components");
        }
        if self.variances.len() != k || self.weights.len() != k || self.labels.len() != k {
            return bad("means, variances, weights and labels must have one entry per component");
        }
        let d = self.dim();
        if d == 0 || self.means.iter().chain(&self.variances).any(|v| v.len() != d) {
            return bad("inconsistent dimensions");
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite mean");
        }
        if self.variances.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("variances must be positive");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be non-negative");
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must sum to 1");
        }
        Ok(())
    }
}

/// Labelled samples with their generating component.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub components: Vec<usize>,
    pub component_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn component_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.component_count];
        for &c in &self.components {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Draws `spec.sample_count` samples; identical for identical seeds.
pub fn generate_dataset(spec: &MixtureSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(&spec.weights)
        .map_err(|e| PfbError::InvalidConfig(format!("mixture weights: {e}")))?;
    let dim = spec.dim();
    let mut data = Vec::with_capacity(spec.sample_count * dim);
    let mut labels = Vec::with_capacity(spec.sample_count);
    let mut components = Vec::with_capacity(spec.sample_count);
    for _ in 0..spec.sample_count {
        let k = picker.sample(&mut rng);
        for (m, v) in spec.means[k].iter().zip(&spec.variances[k]) {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m + v.sqrt() * z);
        }
        labels.push(spec.labels[k]);
        components.push(k);
    }
    Ok(Dataset {
        inputs: Matrix::new(spec.sample_count, dim, data)?,
        labels,
        components,
        component_count: spec.components(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_way(weights: Vec<f64>, n: usize) -> MixtureSpec {
        MixtureSpec {
            means: vec![vec![0.0, 0.0], vec![4.0, 4.0]],
            variances: vec![vec![1.0, 1.0], vec![0.5, 0.5]],
            weights,
            labels: vec![0, 1],
            sample_count: n,
        }
    }

    #[test]
    fn single_component_only() {
        let spec = MixtureSpec {
            means: vec![vec![1.0]],
            variances: vec![vec![1.0]],
            weights: vec![1.0],
            labels: vec![0],
            sample_count: 200,
        };
        let ds = generate_dataset(&spec, 3).unwrap();
        assert!(ds.components.iter().all(|&c| c == 0));
        assert_eq!(ds.len(), 200);
    }

    #[test]
    fn minority_count_within_binomial_bound() {
        let ds = generate_dataset(&two_way(vec![0.95, 0.05], 10_000), 11).unwrap();
        let minority = ds.component_sizes()[1] as f64;
        // mean 500, sd sqrt(10000 * 0.95 * 0.05) = 21.79
        let sd = (10_000.0f64 * 0.95 * 0.05).sqrt();
        assert!((minority - 500.0).abs() <= 3.0 * sd, "{minority}");
    }

    #[test]
    fn same_seed_same_data() {
        let spec = two_way(vec![0.5, 0.5], 300);
        assert_eq!(generate_dataset(&spec, 9).unwrap(), generate_dataset(&spec, 9).unwrap());
        assert_ne!(generate_dataset(&spec, 9).unwrap(), generate_dataset(&spec, 10).unwrap());
    }

    #[test]
    fn rejects_invalid_spec() {
        assert!(generate_dataset(&two_way(vec![0.5, 0.6], 10), 0).is_err());
        let mut s = two_way(vec![0.5, 0.5], 10);
        s.variances[0][1] = 0.0;
        assert!(generate_dataset(&s, 0).is_err());
        s = two_way(vec![0.5, 0.5], 10);
        s.labels.pop();
        assert!(generate_dataset(&s, 0).is_err());
    }

    #[test]
    fn generated_spec_has_requested_shape() {
        let m = MixtureSpec::generated(4, 8, 3.0, 1.0, 0.1, 100, 5);
        m.validate().unwrap();
        assert_eq!(m.weights[3], 0.1);
        for mean in &m.means {
            let r = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 3.0).abs() < 1e-12);
        }
    }
}
