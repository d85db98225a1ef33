use super::*;
use crate::fields::FieldConfig;
use crate::scene::{synth_scene, SynthConfig};

fn tiny_scene() -> SceneDataset {
    synth_scene(&SynthConfig {
        train_views: 4,
        test_views: 1,
        resolution: 24,
        ground_truth_points: 200,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        iterations: Some(20),
        bundles: 4,
        sampling: SamplingConfig {
            n_dense: 16,
            n_sparse: 8,
            guided: Some(GuidedSampling {
                coarse: 16,
                ..GuidedSampling::default()
            }),
        },
        field: FieldConfig::tiny(),
        ..TrainConfig::default()
    }
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_schedule(0, 101, &cfg), 5e-4);
    assert!((lr_schedule(100, 101, &cfg) - 5e-5).abs() < 1e-18);
    assert!((lr_schedule(50, 101, &cfg) - 5e-4 * 10f64.powf(-0.5)).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for s in 0..101 {
        let lr = lr_schedule(s, 101, &cfg);
        assert!(lr <= prev);
        prev = lr;
    }
}

#[test]
fn beta_schedule_anneals_then_holds() {
    let cfg = TrainConfig::default();
    assert!((beta_schedule(0, 1001, &cfg) - 0.1).abs() < 1e-15);
    assert!((beta_schedule(800, 1001, &cfg) - 0.01).abs() < 1e-15);
    assert!((beta_schedule(400, 1001, &cfg) - 0.1f64.powf(1.5)).abs() < 1e-12);
    assert!((beta_schedule(1000, 1001, &cfg) - 0.01).abs() < 1e-15);
}

#[test]
fn identical_seeds_give_identical_steps() {
    let scene = tiny_scene();
    let cfg = tiny_config();
    let mut a = TrainState::new(&cfg);
    let mut b = TrainState::new(&cfg);
    for _ in 0..2 {
        let ra = train_step(&mut a, &scene, &cfg).unwrap();
        let rb = train_step(&mut b, &scene, &cfg).unwrap();
        assert_eq!(ra.loss, rb.loss);
    }
    assert_eq!(a.params, b.params);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let scene = tiny_scene();
    let cfg = TrainConfig {
        lr: 0.0,
        weights: LossWeights {
            eikonal: 0.0,
            ..LossWeights::color_only()
        },
        ..tiny_config()
    };
    let mut s = TrainState::new(&cfg);
    let before = s.params.clone();
    train_step(&mut s, &scene, &cfg).unwrap();
    assert_eq!(s.params, before);
}

#[test]
fn total_equals_weighted_sum_of_terms() {
    let scene = tiny_scene();
    let cfg = tiny_config();
    let mut s = TrainState::new(&cfg);
    let r = train_step(&mut s, &scene, &cfg).unwrap();
    assert!((r.loss.total - r.loss.weighted_sum(&cfg.weights)).abs() < 1e-12);
    assert!(r.loss.conv >= 0.0 && r.loss.eik >= 0.0);
}

#[test]
fn checkpoint_round_trip_and_guards() {
    let scene = tiny_scene();
    let cfg = tiny_config();
    let mut s = TrainState::new(&cfg);
    train_step(&mut s, &scene, &cfg).unwrap();
    let bytes = checkpoint_bytes(&s, &cfg, &cfg.hash());
    let ck = parse_checkpoint(&bytes, Some(&cfg.hash())).unwrap();
    assert_eq!(ck.state.params, s.params);
    assert_eq!(ck.state.optimizer, s.optimizer);
    assert_eq!(ck.state.step, s.step);
    assert_eq!(ck.state.rng, s.rng);
    assert_eq!(ck.config, cfg);
    let other = TrainConfig { seed: 9, ..cfg.clone() };
    assert!(parse_checkpoint(&bytes, Some(&other.hash())).unwrap_err().contains("hash"));
    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 1;
    assert!(parse_checkpoint(&corrupt, None).unwrap_err().contains("corrupt"));
    let mut wrong_version = bytes.clone();
    wrong_version[8] = 7;
    assert!(parse_checkpoint(&wrong_version, None).unwrap_err().contains("version"));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let scene = tiny_scene();
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let mut full = TrainState::new(&cfg);
    let mut full_log = Vec::new();
    train(
        &mut full,
        &scene,
        &cfg,
        RunOptions {
            log: Some(&mut full_log),
            ..RunOptions::default()
        },
    )
    .unwrap();

    let mut part = TrainState::new(&cfg);
    train(
        &mut part,
        &scene,
        &cfg,
        RunOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            stop_after: Some(10),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let ck = load_checkpoint(&dir.path().join("latest.ckpt"), Some(&cfg.hash())).unwrap();
    assert_eq!(ck.state.step, 10);
    let mut resumed = ck.state;
    let mut tail_log = Vec::new();
    train(
        &mut resumed,
        &scene,
        &cfg,
        RunOptions {
            log: Some(&mut tail_log),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.params, full.params);
    let losses = |log: &[u8]| -> Vec<LossBreakdown> {
        std::str::from_utf8(log)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<StepRecord>(l).unwrap().loss)
            .collect()
    };
    assert_eq!(losses(&full_log)[10..], losses(&tail_log)[..]);
}

#[test]
fn surface_mode_step_runs() {
    let scene = tiny_scene();
    let cfg = TrainConfig {
        render_mode: RenderMode::Surface,
        use_mask: true,
        weights: LossWeights {
            mask: 0.1,
            ..LossWeights::default()
        },
        eikonal_points: 32,
        ..tiny_config()
    };
    let mut s = TrainState::new(&cfg);
    let r = train_step(&mut s, &scene, &cfg).unwrap();
    assert!(r.loss.is_finite());
    assert!(r.loss.mask_term > 0.0);
}
