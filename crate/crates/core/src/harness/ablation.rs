//! Bandwidth rule x balancing-weight grid.

use serde::Serialize;

use crate::ade::BandwidthRule;
use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::harness::metrics::RetentionSummary;
use crate::harness::train::{TrainOutcome, Trainer};
use crate::oracle::{density_report, OracleReport};
use crate::repr::{represent, FeatureMap};

/// One cell of the grid.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub rule: BandwidthRule,
    pub weighted: bool,
    pub outcome: TrainOutcome,
    /// Estimator vs brute force on held-out representations.
    pub oracle: OracleReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub rule: BandwidthRule,
    pub weighted: bool,
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub saved_flops: u64,
    pub retention_rates: Vec<f64>,
    pub oracle_max_relative_error: f64,
}

impl AblationCell {
    /// File-name friendly label, e.g. `silverman_weight`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.rule, if self.weighted { "weight" } else { "noweight" })
    }

    pub fn summary(&self) -> CellSummary {
        let h = &self.outcome.history;
        CellSummary {
            rule: self.rule,
            weighted: self.weighted,
            test_accuracy: self.outcome.test_accuracy,
            final_loss: h.last().map_or(f64::NAN, |m| m.mean_loss),
            saved_flops: h.iter().map(|m| m.flops.saved).sum(),
            retention_rates: RetentionSummary::over_pruning(h).rates(),
            oracle_max_relative_error: self.oracle.max_relative_error,
        }
    }
}

/// Grid cells in run order: every rule with weights on, then off.
pub fn grid(base: &RunConfig) -> Vec<RunConfig> {
    [true, false]
        .into_iter()
        .flat_map(|weighted| {
            BandwidthRule::ALL.into_iter().map(move |rule| RunConfig {
                bandwidth_rule: rule,
                weight_ablation: !weighted,
                ..base.clone()
            })
        })
        .collect()
}

/// Trains one configuration and attaches its oracle check.
pub fn run_cell(config: RunConfig) -> Result<AblationCell> {
    let rule = config.bandwidth_rule;
    let weighted = !config.weight_ablation;
    let dim = config.dim;
    let seed = config.seed;
    let mut trainer = Trainer::new(config)?;
    let mut history = Vec::new();
    trainer.run_until(u64::MAX, |m| {
        history.push(m.clone());
        Ok(())
    })?;
    let test = trainer.test_set();
    let probe: Vec<usize> = (0..test.len().min(64)).collect();
    let features = trainer.net().shallow_forward(&test.inputs.select_rows(&probe))?;
    let reps = (0..features.rows())
        .map(|r| represent(&FeatureMap::from_vector(features.row(r).to_vec())?, dim))
        .collect::<Result<Vec<_>>>()?;
    let test_accuracy = trainer.test_accuracy()?;
    let (net, ade) = trainer.into_parts();
    let oracle = density_report(&ade, &reps, seed);
    let outcome = TrainOutcome { net, ade, history, test_accuracy };
    Ok(AblationCell { rule, weighted, outcome, oracle })
}

pub fn run_grid(base: &RunConfig) -> Result<Vec<AblationCell>> {
    grid(base).into_iter().map(run_cell).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_six_cells() {
        let cells = grid(&RunConfig::default());
        assert_eq!(cells.len(), 6);
        let mut seen: Vec<(BandwidthRule, bool)> = cells.iter().map(|c| (c.bandwidth_rule, c.weight_ablation)).collect();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }
}
