use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ade::CentroidSet;
use crate::error::{PfbError, Result};
use crate::harness::config::RunConfig;
use crate::harness::data::{generate_dataset, Dataset};
use crate::harness::metrics::BatchMetrics;
use crate::net::{flops_forward, BatchTensors, TwoStageNet};
use crate::pruner::{prune, score_batch, PruneDecision};
use crate::repr::{represent, FeatureMap, Representation};

// Independent ChaCha streams derived from the run seed.
const INIT_STREAM: u64 = 1 << 62;
const ALPHA_STREAM: u64 = 1 << 63;
const TEST_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TwoStageNet,
    pub ade: CentroidSet,
    pub history: Vec<BatchMetrics>,
    pub test_accuracy: f64,
}

/// Stepwise driver for one run.
///
/// All randomness is keyed by `(seed, epoch)` for batch order and
/// `(seed, iteration)` for the importance offsets, so the state needed to
/// resume is the network, the estimator and the iteration counter.
pub struct Trainer {
    config: RunConfig,
    train: Dataset,
    test: Dataset,
    net: TwoStageNet,
    ade: CentroidSet,
    iteration: u64,
    order: Option<(usize, Vec<usize>)>,
    shallow_passes: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let net = TwoStageNet::new(config.net_dims(), &mut stream_rng(config.seed, INIT_STREAM))?;
        let ade = CentroidSet::new(config.ade_config())?;
        Self::from_state(config, net, ade, 0)
    }

    /// Rebuilds a trainer around saved state; the datasets are regenerated.
    pub fn from_state(config: RunConfig, net: TwoStageNet, ade: CentroidSet, iteration: u64) -> Result<Self> {
        config.validate()?;
        if *net.dims() != config.net_dims() {
            return Err(PfbError::SchemaViolation("network dims disagree with config".into()));
        }
        if *ade.config() != config.ade_config() {
            return Err(PfbError::SchemaViolation("estimator settings disagree with config".into()));
        }
        let train = generate_dataset(&config.train_mixture(), config.data_seed())?;
        let test = generate_dataset(&config.test_mixture(), config.data_seed() ^ TEST_SEED_SALT)?;
        let trainer = Self { config, train, test, net, ade, iteration, order: None, shallow_passes: 0 };
        if iteration > trainer.total_iterations() {
            return Err(PfbError::SchemaViolation(format!(
                "iteration {iteration} beyond run length {}",
                trainer.total_iterations()
            )));
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn net(&self) -> &TwoStageNet {
        &self.net
    }

    pub fn ade(&self) -> &CentroidSet {
        &self.ade
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Number of shallow forward passes this trainer has run.
    pub fn shallow_passes(&self) -> u64 {
        self.shallow_passes
    }

    /// Full batches per epoch; the trailing partial batch is dropped.
    pub fn iterations_per_epoch(&self) -> u64 {
        (self.train.len() / self.config.batch_size) as u64
    }

    pub fn total_iterations(&self) -> u64 {
        self.iterations_per_epoch() * self.config.epochs as u64
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.total_iterations()
    }

    pub fn current_epoch(&self) -> usize {
        (self.iteration / self.iterations_per_epoch()) as usize
    }

    fn batch_indices(&mut self, epoch: usize, pos: usize) -> Vec<usize> {
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.train.len()).collect();
            perm.shuffle(&mut stream_rng(self.config.seed, epoch as u64));
            self.order = Some((epoch, perm));
        }
        let perm = &self.order.as_ref().expect("order cached").1;
        let nb = self.config.batch_size;
        perm[pos * nb..(pos + 1) * nb].to_vec()
    }

    fn representations(&self, features: &crate::net::Matrix) -> Result<Vec<Representation>> {
        (0..features.rows())
            .map(|r| represent(&FeatureMap::from_vector(features.row(r).to_vec())?, self.config.dim))
            .collect()
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<BatchMetrics> {
        if self.is_finished() {
            return Err(PfbError::InvalidConfig("run already finished".into()));
        }
        let ipe = self.iterations_per_epoch();
        let epoch = (self.iteration / ipe) as usize;
        let pos = (self.iteration % ipe) as usize;
        let indices = self.batch_indices(epoch, pos);
        let inputs = self.train.inputs.select_rows(&indices);
        let labels: Vec<usize> = indices.iter().map(|&i| self.train.labels[i]).collect();
        let components: Vec<usize> = indices.iter().map(|&i| self.train.components[i]).collect();

        let features = self.net.shallow_forward(&inputs)?;
        self.shallow_passes += 1;
        let reps = self.representations(&features)?;

        let active = self.config.in_prune_window(epoch) && self.ade.is_initialized();
        let decision = if active {
            let mut rng = stream_rng(self.config.seed, ALPHA_STREAM | self.iteration);
            let scores = score_batch(&reps, &self.ade, self.config.random_bound, &mut rng)?;
            prune(scores, self.config.prune_ratio)?
        } else {
            PruneDecision::keep_all(indices.len())
        };

        let batch = BatchTensors { inputs, labels, features };
        let retained = &decision.retained_indices;
        let kept_features = batch.features.select_rows(retained);
        let kept_labels: Vec<usize> = retained.iter().map(|&i| batch.labels[i]).collect();
        let pass = self.net.deep_forward_loss(&kept_features, &kept_labels)?;
        if !pass.mean_loss.is_finite() {
            return Err(PfbError::NonFiniteLoss { iteration: self.iteration });
        }
        self.net.backward_and_step(&batch, &decision, &pass, self.config.learning_rate)?;
        if !self.net.is_finite() {
            return Err(PfbError::NonFiniteLoss { iteration: self.iteration });
        }

        let kept_reps: Vec<Representation> = retained.iter().map(|&i| reps[i].clone()).collect();
        self.ade.absorb(&kept_reps)?;

        let k = self.train.component_count;
        let mut comp_retained = vec![0u64; k];
        let mut comp_drawn = vec![0u64; k];
        for (i, &c) in components.iter().enumerate() {
            comp_drawn[c] += 1;
            if !decision.mask[i] {
                comp_retained[c] += 1;
            }
        }
        let metrics = BatchMetrics {
            iteration: self.iteration,
            epoch,
            retained: decision.retained_count(),
            mean_importance: decision.mean_importance(),
            threshold: decision.threshold,
            mean_loss: pass.mean_loss,
            flops: flops_forward(self.net.dims(), indices.len(), decision.retained_count()),
            pruning_active: active,
            comp_retained,
            comp_drawn,
        };
        self.iteration += 1;
        Ok(metrics)
    }

    /// Steps until the run is finished or `until` iterations are complete.
    pub fn run_until(&mut self, until: u64, mut sink: impl FnMut(&BatchMetrics) -> Result<()>) -> Result<()> {
        let stop = until.min(self.total_iterations());
        while self.iteration < stop {
            let m = self.step()?;
            sink(&m)?;
        }
        Ok(())
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        self.net.accuracy(&self.test.inputs, &self.test.labels)
    }

    pub fn into_parts(self) -> (TwoStageNet, CentroidSet) {
        (self.net, self.ade)
    }
}

/// Runs a configuration from scratch to completion.
pub fn train(config: RunConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    let mut history = Vec::with_capacity(trainer.total_iterations() as usize);
    trainer.run_until(u64::MAX, |m| {
        history.push(m.clone());
        Ok(())
    })?;
    let test_accuracy = trainer.test_accuracy()?;
    let (net, ade) = trainer.into_parts();
    Ok(TrainOutcome { net, ade, history, test_accuracy })
}
