use pfb_core::harness::generate_dataset;
use pfb_core::net::NetDims;
use pfb_core::oracle::{finite_difference_grad, reference_retained_loss};
use pfb_core::{train, BatchTensors, PruneDecision, RunConfig, Trainer, TwoStageNet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> RunConfig {
    RunConfig { train_samples: 512, test_samples: 256, epochs: 4, stop_prune_epoch: 3, ..RunConfig::default() }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[test]
fn zero_ratio_matches_plain_training_loop() {
    let config = RunConfig { prune_ratio: 0.0, ..small() };
    let outcome = train(config.clone()).unwrap();

    let data = generate_dataset(&config.train_mixture(), config.data_seed()).unwrap();
    let mut net = TwoStageNet::new(config.net_dims(), &mut rng(config.seed, 1 << 62)).unwrap();
    let nb = config.batch_size;
    for epoch in 0..config.epochs {
        let mut perm: Vec<usize> = (0..data.len()).collect();
        perm.shuffle(&mut rng(config.seed, epoch as u64));
        for chunk in perm.chunks_exact(nb) {
            let inputs = data.inputs.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let features = net.shallow_forward(&inputs).unwrap();
            let pass = net.deep_forward_loss(&features, &labels).unwrap();
            let batch = BatchTensors { inputs, labels, features };
            net.backward_and_step(&batch, &PruneDecision::keep_all(nb), &pass, config.learning_rate).unwrap();
        }
    }
    assert_eq!(outcome.net.flat_params(), net.flat_params());
    assert!(outcome.history.iter().all(|m| m.retained == nb && m.flops.saved == 0));
}

#[test]
fn zero_ratio_equals_pruning_disabled() {
    let a = train(RunConfig { prune_ratio: 0.0, ..small() }).unwrap();
    let b = train(RunConfig { start_prune_epoch: 4, stop_prune_epoch: 4, ..small() }).unwrap();
    assert_eq!(a.net.flat_params(), b.net.flat_params());
    assert_eq!(a.test_accuracy, b.test_accuracy);
}

#[test]
fn no_pruning_before_estimator_is_seeded() {
    let mut trainer = Trainer::new(RunConfig { start_prune_epoch: 0, prune_ratio: 0.5, ..small() }).unwrap();
    assert!(!trainer.ade().is_initialized());
    let first = trainer.step().unwrap();
    assert!(!first.pruning_active);
    assert_eq!(first.retained, 64);
    assert!(trainer.ade().is_initialized());
    let second = trainer.step().unwrap();
    assert!(second.pruning_active);
    assert_eq!(second.retained, 32);
}

#[test]
fn full_batches_outside_window() {
    let config = small();
    let h = train(config.clone()).unwrap().history;
    for m in &h {
        let inside = config.in_prune_window(m.epoch);
        assert_eq!(m.pruning_active, inside);
        let expected = if inside { 64 - 19 } else { 64 };
        assert_eq!(m.retained, expected, "iteration {}", m.iteration);
    }
}

#[test]
fn every_sample_costs_exactly_one_shallow_pass() {
    let mut trainer = Trainer::new(small()).unwrap();
    let mut rows = 0;
    trainer.run_until(u64::MAX, |_| Ok(())).unwrap();
    rows += trainer.iteration();
    assert_eq!(trainer.shallow_passes(), rows);
    assert_eq!(rows, 4 * 512 / 64);
}

#[test]
fn history_is_identical_across_thread_counts() {
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(small()).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.net.flat_params(), b.net.flat_params());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.threshold.to_bits(), y.threshold.to_bits());
        assert_eq!(x.mean_importance.to_bits(), y.mean_importance.to_bits());
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let a = train(small()).unwrap();
    let b = train(RunConfig { seed: 1, ..small() }).unwrap();
    assert_ne!(a.net.flat_params(), b.net.flat_params());
}

#[test]
fn gradient_matches_finite_differences_mid_training() {
    let mut trainer = Trainer::new(RunConfig { prune_ratio: 0.5, ..small() }).unwrap();
    trainer.run_until(20, |_| Ok(())).unwrap();
    let net = trainer.net().clone();
    let rows: Vec<usize> = (0..16).collect();
    let inputs = trainer.train_set().inputs.select_rows(&rows);
    let labels: Vec<usize> = rows.iter().map(|&i| trainer.train_set().labels[i]).collect();
    let features = net.shallow_forward(&inputs).unwrap();
    let batch = BatchTensors { inputs, labels, features };
    let mut decision = PruneDecision::keep_all(16);
    for i in [1, 4, 9, 10] {
        decision.mask[i] = true;
    }
    decision.retained_indices = (0..16).filter(|i| !decision.mask[*i]).collect();
    let kept = batch.features.select_rows(&decision.retained_indices);
    let kept_labels: Vec<usize> = decision.retained_indices.iter().map(|&i| batch.labels[i]).collect();
    let pass = net.deep_forward_loss(&kept, &kept_labels).unwrap();
    assert!((pass.mean_loss - reference_retained_loss(&net, &batch, &decision)).abs() < 1e-12);
    let g = net.gradient(&batch, &decision, &pass).unwrap();
    let f = finite_difference_grad(&net, &batch, &decision, 1e-5);
    for (a, b) in g.iter().zip(&f) {
        assert!((a - b).abs() <= 1e-6 + 1e-4 * a.abs().max(b.abs()), "{a} vs {b}");
    }
}

#[test]
fn deeper_deep_stage_trains() {
    let config = RunConfig { deep_hidden_layers: 2, ..small() };
    let dims = config.net_dims();
    assert_eq!(dims, NetDims { deep_hidden_layers: 2, ..NetDims::new(8, 16, 16, 4) });
    let outcome = train(config).unwrap();
    assert!(outcome.history.last().unwrap().mean_loss < outcome.history[0].mean_loss);
}
