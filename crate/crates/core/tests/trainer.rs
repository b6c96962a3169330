use proptest::prelude::*;
use voxface::dataset::{synth_generate, ClipData};
use voxface::frontend::{FeatureConfig, FeatureExtractor, Normalizer};
use voxface::inference::infer_track;
use voxface::network::{ModelConfig, ModelParams};
use voxface::trainer::{
    adam_step, batch_predict, clip_global_norm, decode_checkpoint, encode_checkpoint, load_checkpoint, make_batches, save_checkpoint, train,
    AdamConfig, AdamState, Checkpoint, TrainConfig, TrainingMeta, BEST_CHECKPOINT, FINAL_CHECKPOINT, TRAIN_LOG,
};
use voxface::Error;
use voxface_autograd::Tensor;

fn clip(seed: u64, seconds: f64) -> ClipData {
    let (audio, track) = synth_generate(seed, seconds).unwrap();
    let ex = FeatureExtractor::new(&FeatureConfig::default()).unwrap();
    ClipData::new(format!("clip{seed}"), &audio, track, &ex).unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 1e-3,
        seed: 3,
        model: ModelConfig {
            hidden_size: 6,
            basis_size: 5,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let mut p = Tensor::<f64>::scalar(0.7);
    let mut state = AdamState::new([&p]);
    adam_step(&mut [&mut p], &[Tensor::scalar(0.3)], &mut state, 1e-4, &AdamConfig::default()).unwrap();
    let moved = 0.7 - p.data()[0];
    // m̂ = g and v̂ = g², so the step is lr·g/(|g| + eps).
    let want = 1e-4 * 0.3 / (0.3 + 1e-8);
    assert!((moved - want).abs() < 1e-15, "{moved}");
    assert_eq!(state.step, 1);
}

#[test]
fn zero_gradients_leave_parameters_alone() {
    let orig = Tensor::<f64>::from_fn(3, 4, |i, j| i as f64 - j as f64 * 0.5);
    let mut p = orig.clone();
    let mut state = AdamState::new([&p]);
    for _ in 0..3 {
        adam_step(&mut [&mut p], &[Tensor::zeros(vec![3, 4])], &mut state, 0.1, &AdamConfig::default()).unwrap();
    }
    assert_eq!(p, orig);
    assert_eq!(state.step, 3);
}

#[test]
fn equal_gradients_give_equal_updates() {
    let mut a = Tensor::<f64>::scalar(1.0);
    let mut b = Tensor::<f64>::scalar(1.0);
    let mut state = AdamState::new([&a, &b]);
    for g in [0.2, -0.7, 1.3] {
        let grads = [Tensor::scalar(g), Tensor::scalar(g)];
        adam_step(&mut [&mut a, &mut b], &grads, &mut state, 1e-2, &AdamConfig::default()).unwrap();
    }
    assert_eq!(a, b);
}

#[test]
fn adam_rejects_mismatched_shapes() {
    let mut p = Tensor::<f64>::zeros(vec![2, 2]);
    let mut state = AdamState::new([&p]);
    let cfg = AdamConfig::default();
    assert!(adam_step(&mut [&mut p], &[Tensor::zeros(vec![2, 3])], &mut state, 1e-3, &cfg).is_err());
    assert!(adam_step(&mut [&mut p], &[], &mut state, 1e-3, &cfg).is_err());
    assert_eq!(state.step, 0);
}

#[test]
fn gradient_clipping_caps_the_joint_norm() {
    let mut g = vec![Tensor::<f64>::row(vec![3.0, 0.0]), Tensor::row(vec![0.0, 4.0])];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[1] - 0.8).abs() < 1e-15);
    let mut small = vec![Tensor::<f64>::row(vec![0.1])];
    clip_global_norm(&mut small, 5.0);
    assert_eq!(small[0].data(), &[0.1]);
}

#[test]
fn eight_hundred_frames_make_eight_batches() {
    let batches = make_batches(&[800], 100, 8, 1);
    assert_eq!(batches.len(), 8);
    assert!(batches.iter().all(|b| b.frames() == 100));
    assert_eq!(make_batches(&[800], 100, 8, 1), batches);
    assert_ne!(make_batches(&[800], 100, 8, 2), batches);
}

#[test]
fn lr_zero_keeps_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        ..tiny_config()
    };
    let out = train(&[clip(1, 1.0)], &[], &cfg, dir.path()).unwrap();
    let init = ModelParams::<f32>::init(&cfg.model, cfg.seed).unwrap();
    assert_eq!(out.final_checkpoint.params, init);
}

#[test]
fn one_batch_updates_every_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 30,
        ..tiny_config()
    };
    let out = train(&[clip(2, 1.0)], &[], &cfg, dir.path()).unwrap();
    let init = ModelParams::<f32>::init(&cfg.model, cfg.seed).unwrap();
    for ((name, after), before) in out.final_checkpoint.params.named_tensors().into_iter().zip(init.tensors()) {
        let norm: f32 = after.data().iter().zip(before.data()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(norm > 0.0, "{name} did not move");
    }
}

#[test]
fn training_is_deterministic_and_writes_artifacts() {
    let train_set = [clip(4, 1.0), clip(5, 0.7)];
    let val_set = [clip(6, 0.5)];
    let cfg = tiny_config();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = train(&train_set, &val_set, &cfg, d1.path()).unwrap();
    let b = train(&train_set, &val_set, &cfg, d2.path()).unwrap();
    for name in [FINAL_CHECKPOINT, BEST_CHECKPOINT, TRAIN_LOG] {
        let x = std::fs::read(d1.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(d2.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(a.history.len(), 2);
    assert!(a.history.iter().all(|h| h.val_loss.is_finite() && h.val_rmse > 0.0));
    let log = std::fs::read_to_string(&a.log_path).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,val_rmse");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("2,"));
    let best = load_checkpoint(&a.best_path).unwrap();
    assert_eq!(best, a.best_checkpoint);
    assert_eq!(best.meta.epoch, a.best_epoch);
    assert_eq!(load_checkpoint(&a.final_path).unwrap().meta.loss_history.len(), 2);
    assert_eq!(b.final_checkpoint, a.final_checkpoint);
}

#[test]
fn training_reduces_loss_on_a_tiny_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 30,
        learning_rate: 5e-3,
        ..tiny_config()
    };
    let out = train(&[clip(7, 2.0)], &[], &cfg, dir.path()).unwrap();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < 0.8 * first, "{first} -> {last}");
    assert!(out.history.iter().all(|h| h.val_loss.is_nan()));
}

#[test]
fn invalid_configs_and_empty_sets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = [clip(8, 0.5)];
    for cfg in [
        TrainConfig { epochs: 0, ..tiny_config() },
        TrainConfig { batch_size: 0, ..tiny_config() },
        TrainConfig { sequence_chunk: 1, ..tiny_config() },
        TrainConfig { learning_rate: f64::NAN, ..tiny_config() },
    ] {
        assert!(matches!(train(&data, &[], &cfg, dir.path()), Err(Error::Config(_))));
    }
    assert!(matches!(train(&[], &[], &tiny_config(), dir.path()), Err(Error::Empty(_))));
}

#[test]
fn exploding_learning_rate_aborts_with_batch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e300,
        epochs: 3,
        grad_clip: f64::INFINITY,
        ..tiny_config()
    };
    match train(&[clip(9, 1.0)], &[], &cfg, dir.path()) {
        Err(Error::NonFiniteLoss { epoch, batch }) => {
            let msg = Error::NonFiniteLoss { epoch, batch }.to_string();
            assert!(msg.contains("batch"), "{msg}");
        }
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.history)),
    }
}

fn sample_checkpoint() -> Checkpoint {
    let cfg = ModelConfig {
        hidden_size: 4,
        basis_size: 3,
        bidirectional: false,
        ..ModelConfig::default()
    };
    Checkpoint {
        params: ModelParams::init(&cfg, 12).unwrap(),
        features: FeatureConfig::lpc(),
        normalizer: Normalizer {
            mean: (0..39).map(|i| i as f64 * 0.25).collect(),
            std: (0..39).map(|i| 1.0 + i as f64 * 0.5).collect(),
        },
        meta: TrainingMeta {
            epoch: 3,
            loss_history: vec![0.5, 0.25, 0.125],
        },
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ckpt = sample_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.a2fm");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"A2FM");
}

#[test]
fn damaged_checkpoints_are_described() {
    let bytes = encode_checkpoint(&sample_checkpoint());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let err = decode_checkpoint(&bad_magic).unwrap_err();
    assert!(err.to_string().contains("not a checkpoint"));

    let mut v99 = bytes.clone();
    v99[4..8].copy_from_slice(&99u32.to_le_bytes());
    let err = decode_checkpoint(&v99).unwrap_err();
    assert!(matches!(err, Error::UnsupportedVersion(99)));
    assert!(err.to_string().contains("unsupported version"));

    let err = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");

    let mut extra = bytes;
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
}

#[test]
fn missing_checkpoint_reports_its_path() {
    let err = load_checkpoint(std::path::Path::new("/nonexistent/m.a2fm")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/m.a2fm"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_covers_every_frame_once(
        lens in proptest::collection::vec(0usize..60, 1..6),
        batch in 1usize..50,
        chunk in 2usize..12,
        seed in 0u64..1000,
    ) {
        let batches = make_batches(&lens, batch, chunk, seed);
        let mut seen: Vec<Vec<u32>> = lens.iter().map(|&n| vec![0; n]).collect();
        let total: usize = lens.iter().sum();
        for (i, b) in batches.iter().enumerate() {
            if i + 1 < batches.len() {
                prop_assert_eq!(b.frames(), batch);
            } else {
                prop_assert!(b.frames() >= 1 && b.frames() <= batch);
            }
            for s in &b.segments {
                prop_assert!(s.len >= 1 && s.len <= chunk);
                // A segment never crosses a chunk boundary.
                prop_assert_eq!(s.start / chunk, (s.start + s.len - 1) / chunk);
                for c in &mut seen[s.clip][s.start..s.start + s.len] {
                    *c += 1;
                }
            }
        }
        prop_assert!(seen.iter().flatten().all(|&c| c == 1));
        prop_assert_eq!(batches.iter().map(|b| b.frames()).sum::<usize>(), total);
        prop_assert_eq!(make_batches(&lens, batch, chunk, seed), batches);
    }
}

#[test]
fn batch_prediction_agrees_with_window_inference() {
    let ex = FeatureExtractor::new(&FeatureConfig::default()).unwrap();
    let audio: Vec<_> = [(10, 1.5), (11, 0.4)].iter().map(|&(s, d)| synth_generate(s, d).unwrap()).collect();
    let data: Vec<ClipData> = audio
        .iter()
        .enumerate()
        .map(|(i, (a, t))| ClipData::new(i.to_string(), a, t.clone(), &ex).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 1, ..tiny_config() };
    let ckpt = train(&data, &[], &cfg, dir.path()).unwrap().final_checkpoint;
    let tracks = batch_predict(&ckpt, &data, 7).unwrap();
    for ((a, _), t) in audio.iter().zip(&tracks) {
        let direct = infer_track(a, &ckpt).unwrap();
        assert_eq!(t.len(), direct.len());
        for (x, y) in t.frames().iter().zip(direct.frames()) {
            for (u, v) in x.params().iter().zip(y.params()) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }
    assert!(batch_predict(&ckpt, &data, 0).is_err());
}
