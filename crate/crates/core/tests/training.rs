mod common;

use common::smoke::*;

use ctxlm::checkpoint::Checkpoint;
use ctxlm::eval::perplexity;
use ctxlm::model::Gradients;
use ctxlm::train::{batch_gradient, fit, Adam, AdamConfig, Batch, FullSoftmax, SampledSoftmax, TrainConfig};
use ctxlm::Error;

#[test]
fn smoke_loss_decreases_every_epoch() {
    let config = smoke_config();
    let prepared = smoke(&config, false);
    assert_eq!(prepared.train.len(), 200);
    let (_, metrics) = fit(&config, &prepared, |_, _| {}).unwrap();
    let losses: Vec<f64> = metrics.iter().map(|m| m.train_loss).collect();
    println!("{losses:?}");
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{losses:?}");
    }
}

#[test]
fn sampled_softmax_training_also_descends() {
    let config = TrainConfig {
        negative_samples: 8,
        dropout: 0.2,
        ..smoke_config()
    };
    let prepared = smoke(&config, true);
    let (ckpt, metrics) = fit(&config, &prepared, |_, _| {}).unwrap();
    assert!(metrics.last().unwrap().train_loss < metrics[0].train_loss);
    let ppl = perplexity(&ckpt.model, &prepared.heldout).unwrap();
    assert!(ppl.is_finite() && ppl < prepared.vocab.len() as f64);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let config = TrainConfig {
        learning_rate: 0.0,
        max_epochs: 2,
        ..smoke_config()
    };
    let prepared = smoke(&config, false);
    let initial = prepared.initial_model(&config).unwrap();
    let (ckpt, _) = fit(&config, &prepared, |_, _| {}).unwrap();
    assert_eq!(ckpt.model, initial);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let config = TrainConfig {
        max_epochs: 2,
        dropout: 0.1,
        negative_samples: 5,
        ..smoke_config()
    };
    let prepared = smoke(&config, true);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| fit(&config, &prepared, |_, _| {}).unwrap().0.to_bytes().unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(a, run(3));
    let other = TrainConfig { seed: 18, ..config.clone() };
    let b = fit(&other, &prepared, |_, _| {}).unwrap().0.to_bytes().unwrap();
    assert_ne!(a, b);
}

#[test]
fn checkpoint_round_trip_preserves_perplexity() {
    let config = TrainConfig {
        max_epochs: 2,
        ..smoke_config()
    };
    let prepared = smoke(&config, true);
    let (ckpt, _) = fit(&config, &prepared, |_, _| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let before = perplexity(&ckpt.model, &prepared.heldout).unwrap();
    let after = perplexity(&loaded.model, &prepared.heldout).unwrap();
    assert!((before - after).abs() < 1e-6);
    assert_eq!(loaded.vocab.id("pizza"), ckpt.vocab.id("pizza"));
    assert_eq!(loaded.registry.variable_index("mood"), Some(1));
    assert_eq!(loaded.registry.variables[0].get("tech"), ckpt.registry.variables[0].get("tech"));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let config = TrainConfig {
        max_epochs: 1,
        ..smoke_config()
    };
    let (ckpt, _) = fit(&config, &smoke(&config, false), |_, _| {}).unwrap();
    let bytes = ckpt.to_bytes().unwrap();
    for cut in [0, 7, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_) | Error::Json(_))));
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut bad_magic = bytes;
    bad_magic[0] ^= 1;
    assert!(Checkpoint::from_bytes(&bad_magic).is_err());
}

#[test]
fn padding_does_not_change_gradients() {
    let config = smoke_config();
    let prepared = smoke(&config, false);
    let model = prepared.initial_model(&config).unwrap();
    let rows: Vec<_> = prepared.train[..13].iter().collect();
    let tight = Batch::new(&rows, None);
    let padded = Batch::new(&rows, Some(tight.width + 9));
    assert!(padded.tokens.iter().all(|t| t.len() == tight.width + 9));
    for objective in [
        &FullSoftmax as &dyn ctxlm::train::Objective,
        &SampledSoftmax::new(4, prepared.vocab.unigram()),
    ] {
        let a = batch_gradient(&model, &tight, objective, 0.3, 5, 2).unwrap();
        let b = batch_gradient(&model, &padded, objective, 0.3, 5, 2).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn non_finite_gradient_is_reported_by_name() {
    let config = smoke_config();
    let prepared = smoke(&config, false);
    let mut model = prepared.initial_model(&config).unwrap();
    let before = model.clone();
    let mut adam = Adam::new(&model, AdamConfig::default());
    let mut g = Gradients::zeros_like(&model.params);
    g.params.lm.cw[[0, 1]] = f64::NAN;
    match adam.step(&mut model, &g) {
        Err(Error::NonFinite(name)) => assert_eq!(name, "C_w"),
        other => panic!("{other:?}"),
    }
    let mut g = Gradients::zeros_like(&model.params);
    g.hash.insert(3, f64::INFINITY);
    assert!(matches!(adam.step(&mut model, &g), Err(Error::NonFinite(n)) if n == "H"));
    assert_eq!(model, before);
    assert_eq!(adam.steps(), 0);
}
