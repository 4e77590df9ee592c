use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitbench_core::autodiff::Graph;
use vitbench_core::data::{make_folds_from, AugmentPolicy};
use vitbench_core::exec::Sequential;
use vitbench_core::metrics::MetricSet;
use vitbench_core::train::{
    cross_validate, per_sample_loss, prepare_batch, resubstitution_eval, run_grid, run_replications,
    run_replications_with_seeds, weighted_ce_loss, ClassWeights, GridAxes, ImageSet, Setup, TrainConfig,
};
use vitbench_core::vit::{init_params, VitConfig};
use vitbench_core::Tensor;

fn tiny_vit() -> VitConfig {
    VitConfig { image_size: 8, patch_size: 4, embed_dim: 8, depth: 1, num_heads: 2, mlp_ratio: 1.0, num_classes: 2, dropout_rate: 0.0 }
}

/// Bright images are abnormal, dark ones normal, with per-image speckle.
fn toy(n: usize, seed: u64) -> (Vec<Tensor>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = (i % 3 != 0) as u8;
        let base = if label == 1 { 0.75 } else { 0.25 };
        images.push(Tensor::new(&[3, 8, 8], (0..192).map(|_| base + rng.random_range(-0.1..0.1)).collect()).unwrap());
        labels.push(label);
    }
    (images, labels)
}

fn singleton_groups(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i}")).collect()
}

fn quick() -> TrainConfig {
    TrainConfig { epochs: 3, batch_size: 8, learning_rate: 5e-3, ..TrainConfig::default() }
}

#[test]
fn validation_batches_are_never_augmented() {
    let (images, labels) = toy(6, 1);
    let data = ImageSet::new(&images, &labels).unwrap();
    let policy = AugmentPolicy::default();
    let a = prepare_batch(data, &[0, 1, 2], &policy, 7, None).unwrap();
    let b = prepare_batch(data, &[0, 1, 2], &policy, 8, None).unwrap();
    assert_eq!(a, b);
    let t0 = prepare_batch(data, &[0, 1, 2], &policy, 7, Some(0)).unwrap();
    let t1 = prepare_batch(data, &[0, 1, 2], &policy, 7, Some(1)).unwrap();
    assert_ne!(t0, t1);
    assert_eq!(t0, prepare_batch(data, &[0, 1, 2], &policy, 7, Some(0)).unwrap());
}

#[test]
fn singleton_grid_equals_direct_cross_validation() {
    let (images, labels) = toy(18, 2);
    let names = singleton_groups(18);
    let groups: Vec<&str> = names.iter().map(String::as_str).collect();
    let plan = make_folds_from(&labels, &groups, 3, 4).unwrap();
    let vit = tiny_vit();
    let policy = AugmentPolicy::none();
    let setup = Setup::new(ImageSet::new(&images, &labels).unwrap(), &vit, &policy);
    let base = quick();
    let axes = GridAxes { batch_sizes: vec![8], learning_rates: vec![5e-3], epoch_counts: vec![3] };
    let rows = run_grid(&Sequential, setup, &plan, &axes, &base).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = cross_validate(&Sequential, setup, &plan, &base).unwrap();
    assert_eq!(rows[0].cv, direct);

    let two = GridAxes { batch_sizes: vec![16, 4], ..axes };
    let rows = run_grid(&Sequential, setup, &plan, &two, &base).unwrap();
    assert_eq!(rows.iter().map(|r| (r.experiment, r.batch_size)).collect::<Vec<_>>(), [(1, 4), (2, 16)]);
}

#[test]
fn default_grid_numbering_matches_selected_experiments() {
    let cells = GridAxes::default().cells().unwrap();
    // experiments 3, 11, 12 and 21: the four replicated configurations
    assert_eq!(cells[2], (16, 0.0001, 15));
    assert_eq!(cells[10], (32, 0.0001, 10));
    assert_eq!(cells[11], (32, 0.0001, 15));
    assert_eq!(cells[20], (64, 0.0001, 15));
}

#[test]
fn replications_aggregate_and_degenerate_seeds() {
    let (images, labels) = toy(15, 3);
    let names = singleton_groups(15);
    let groups: Vec<&str> = names.iter().map(String::as_str).collect();
    let plan = make_folds_from(&labels, &groups, 3, 0).unwrap();
    let vit = tiny_vit();
    let policy = AugmentPolicy::none();
    let setup = Setup::new(ImageSet::new(&images, &labels).unwrap(), &vit, &policy);
    let cfg = TrainConfig { epochs: 2, ..quick() };

    let same = run_replications_with_seeds(&Sequential, setup, &plan, &cfg, &[42, 42, 42], true).unwrap();
    assert_eq!(same.rows.len(), 3);
    for key in ["accuracy", "precision", "recall", "f1"] {
        assert_eq!(same.cv[key].std, 0.0);
        assert_eq!(same.app[key].std, 0.0);
    }

    let report = run_replications(&Sequential, setup, &plan, &cfg, 3, 9, false).unwrap();
    let seeds: Vec<u64> = report.rows.iter().map(|r| r.seed).collect();
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
    assert!(report.rows.iter().all(|r| r.app.is_none()));
    let acc: Vec<f64> = report.rows.iter().map(|r| r.cv.mean.unwrap().accuracy).collect();
    let mean = acc.iter().sum::<f64>() / 3.0;
    assert!((report.cv["accuracy"].mean - mean).abs() < 1e-12);
    assert_eq!(report.cv_pooled_folds["accuracy"].n, 9);
    assert!(run_replications(&Sequential, setup, &plan, &cfg, 1, 9, false).is_err());

    // adding replicates leaves earlier ones untouched
    let more = run_replications(&Sequential, setup, &plan, &cfg, 4, 9, false).unwrap();
    assert_eq!(more.rows[..3], report.rows[..]);
}

#[test]
fn resubstitution_memorises_a_tiny_set() {
    let (images, labels) = toy(12, 5);
    let vit = tiny_vit();
    let policy = AugmentPolicy::none();
    let setup = Setup::new(ImageSet::new(&images, &labels).unwrap(), &vit, &policy);
    let cfg = TrainConfig { epochs: 40, batch_size: 4, learning_rate: 1e-2, weight_decay: 0.0, early_stop_patience: 40, ..TrainConfig::default() };
    let run = resubstitution_eval(setup, &cfg).unwrap();
    let m: MetricSet = run.metrics().unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert!(run.fold.is_none());
}

#[test]
fn pretrained_init_is_used() {
    let (images, labels) = toy(9, 6);
    let vit = tiny_vit();
    let policy = AugmentPolicy::none();
    let data = ImageSet::new(&images, &labels).unwrap();
    let start = init_params(&vit, 1234).unwrap();
    let cfg = TrainConfig { epochs: 1, ..quick() };
    let idx: Vec<usize> = (0..9).collect();
    let a = vitbench_core::train::fit(Setup::new(data, &vit, &policy).with_init(&start), &idx, &idx, &cfg, 1, None).unwrap();
    let b = vitbench_core::train::fit(Setup::new(data, &vit, &policy).with_init(&start), &idx, &idx, &cfg, 2, None).unwrap();
    let c = vitbench_core::train::fit(Setup::new(data, &vit, &policy), &idx, &idx, &cfg, 1, None).unwrap();
    // same start, different shuffles: both moved away from the same point
    assert_ne!(a.params, c.params);
    assert!(a.params.is_some() && b.params.is_some());
    let wrong = VitConfig { embed_dim: 16, ..vit };
    let other = init_params(&wrong, 0).unwrap();
    assert!(vitbench_core::train::fit(Setup::new(data, &vit, &policy).with_init(&other), &idx, &idx, &cfg, 1, None).is_err());
}

#[test]
fn early_stopping_keeps_the_best_checkpoint() {
    let (images, labels) = toy(24, 7);
    let vit = tiny_vit();
    let policy = AugmentPolicy::default();
    let data = ImageSet::new(&images, &labels).unwrap();
    let idx: Vec<usize> = (0..24).collect();
    for patience in [0, 1, 3] {
        let cfg = TrainConfig { epochs: 25, early_stop_patience: patience, learning_rate: 3e-2, batch_size: 6, ..TrainConfig::default() };
        let run = vitbench_core::train::fit(Setup::new(data, &vit, &policy), &idx[..16], &idx[16..], &cfg, 11, None).unwrap();
        let r = run.result;
        let best = r.best_epoch.unwrap();
        let best_loss = r.validation.as_ref().unwrap().loss;
        assert_eq!(best_loss, r.history[best].val_loss);
        assert!(r.history.iter().all(|e| best_loss <= e.val_loss));
        if r.stopped_early {
            assert_eq!(r.history.len(), best + patience + 2);
        }
    }
}

fn plain_ce(logits: &Tensor, labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (a, b) = (logits.get2(i, 0), logits.get2(i, 1));
        let lse = (a.exp() + b.exp()).ln();
        total -= [a, b][y as usize] - lse;
    }
    total / labels.len() as f64
}

proptest! {
    #[test]
    fn unit_weight_unsmoothed_loss_is_plain_ce(seed in any::<u64>(), batch in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::new(&[batch, 2], (0..2 * batch).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
        let labels: Vec<u8> = (0..batch).map(|_| rng.random_range(0..2u8)).collect();
        let mut g = Graph::new();
        let x = g.constant(logits.clone()).unwrap();
        let loss = weighted_ce_loss(&mut g, x, &labels, &ClassWeights::uniform(), 0.0).unwrap();
        prop_assert!((g.value(loss).data()[0] - plain_ce(&logits, &labels)).abs() < 1e-12);
    }

    #[test]
    fn raising_a_multiplier_never_lowers_that_class_loss(seed in any::<u64>(), bump in 1.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::new(&[6, 2], (0..12).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let labels = [0u8, 1, 0, 1, 1, 1];
        let w = ClassWeights::from_pair(1.9, 0.68);
        let heavier = ClassWeights::from_pair(1.9 * bump, 0.68);
        let before = per_sample_loss(&logits, &labels, &w, 0.1);
        let after = per_sample_loss(&logits, &labels, &heavier, 0.1);
        for (i, &y) in labels.iter().enumerate() {
            if y == 0 {
                prop_assert!(after[i] >= before[i]);
            } else {
                prop_assert_eq!(after[i], before[i]);
            }
        }
    }
}
