use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nicenet::model::ModelConfig;
use nicenet::training::{
    load_checkpoint, loss_and_gradients, sample_indices, save_checkpoint, train_loop, Subject, TrainConfig, TrainState,
};
use nicenet::volumes::{make_dataset, make_phantom, DatasetSpec};
use nicenet::Error;

fn small() -> ModelConfig {
    ModelConfig {
        enc_channels: [4, 8, 8, 16, 16],
        dec_channels: [16, 16, 16, 8, 4],
        ..Default::default()
    }
}

#[test]
fn ordered_pairs_are_uniform() {
    let n = 10;
    let draws = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for _ in 0..draws {
        let p = sample_indices(n, &mut rng).unwrap();
        *counts.entry((p.fixed, p.moving)).or_default() += 1;
    }
    assert_eq!(counts.len(), n * (n - 1));
    let p = 1.0 / (n * (n - 1)) as f64;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for (pair, &c) in &counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "{pair:?}: {c} vs {mean:.1} ± {sd:.1}");
    }
}

#[test]
fn gradient_steps_reduce_the_loss_on_a_fixed_pair() {
    let (fixed, _) = make_phantom(10, [32, 32, 32], 40).unwrap();
    let (moving, _) = make_phantom(11, [32, 32, 32], 40).unwrap();
    let mut improved = 0;
    for seed in 0..5 {
        let cfg = TrainConfig {
            seed,
            lambda: 0.0,
            ..Default::default()
        };
        let mut state = TrainState::new(cfg, &small()).unwrap();
        let (first, _) = loss_and_gradients(&state.model, &fixed, &moving).unwrap();
        for _ in 0..100 {
            let (_, grads) = loss_and_gradients(&state.model, &fixed, &moving).unwrap();
            state.optimizer.update(state.model.layers_mut(), &grads);
        }
        let (last, _) = loss_and_gradients(&state.model, &fixed, &moving).unwrap();
        if last.total < first.total {
            improved += 1;
        }
    }
    assert!(improved >= 3, "only {improved} of 5 seeds descended");
}

fn subjects(count: usize) -> Vec<Subject> {
    let spec = DatasetSpec {
        count,
        shape: [32, 32, 32],
        ..Default::default()
    };
    make_dataset(&spec)
        .unwrap()
        .2
        .into_iter()
        .map(|s| Subject::new(s.image, Some(s.labels)))
        .collect()
}

#[test]
fn checkpoints_round_trip_state() {
    let data = subjects(3);
    let cfg = TrainConfig {
        iterations: 3,
        ..Default::default()
    };
    let out = train_loop(&cfg, &small(), &data, &[], None, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    save_checkpoint(&out.state, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.iteration, 3);
    assert_eq!(back.config, out.state.config);
    assert_eq!(back.model.layers(), out.state.model.layers());
    assert_eq!(back.rng, out.state.rng);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    std::fs::write(&path, b"NICECKPT\x01\x00").unwrap();
    assert!(load_checkpoint(&path).is_err());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
}

#[test]
fn resume_refuses_a_different_configuration() {
    let data = subjects(3);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        iterations: 2,
        checkpoint_interval: 1,
        ..Default::default()
    };
    train_loop(&cfg, &small(), &data, &[], Some(dir.path()), false).unwrap();
    let other = TrainConfig {
        lr: 5e-4,
        iterations: 4,
        ..cfg
    };
    let err = train_loop(&other, &small(), &data, &[], Some(dir.path()), true).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn too_few_training_volumes_is_a_config_error() {
    let data = subjects(1);
    let err = train_loop(&TrainConfig::default(), &small(), &data, &[], None, false).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
