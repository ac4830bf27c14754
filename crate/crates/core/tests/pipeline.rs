//! End-to-end behaviour of training, checkpoints and inference.

use std::collections::BTreeMap;

use bvd::datagen::{generate_clip, sample_window, ClipPair, GenConfig, SamplerConfig};
use bvd::losses::EnabledTerms;
use bvd::metrics;
use bvd::model::{build_model, HasParameters, Model, ModelConfig};
use bvd::pipeline::{
    decode_checkpoint, encode_checkpoint, infer_clip, load_checkpoint, load_checkpoint_for, save_checkpoint, train,
    train_step, InferenceConfig, RunConfig, TrainOptions, TrainState,
};
use bvd::{Error, Image};

fn clips(n: usize, h: usize, w: usize, len: usize) -> Vec<ClipPair> {
    (0..n as u64)
        .map(|s| generate_clip(100 + s, &GenConfig::with_size(h, w, len)).unwrap())
        .collect()
}

fn run_config(pairs: &[(&str, &str)]) -> RunConfig {
    let cli: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    RunConfig::resolve_with_seed(&BTreeMap::new(), &cli, None).unwrap()
}

fn toy_run(extra: &[(&str, &str)]) -> RunConfig {
    let mut pairs = vec![
        ("preset", "toy"),
        ("crop", "16"),
        ("batch_size", "2"),
        ("recurrence_steps", "2"),
        ("seed", "7"),
    ];
    pairs.extend_from_slice(extra);
    run_config(&pairs)
}

fn exact() -> InferenceConfig {
    InferenceConfig {
        copy_threshold: 0.0,
        ..Default::default()
    }
}

#[test]
fn zeroed_head_reproduces_the_input_exactly() {
    let clip = &clips(1, 32, 32, 48)[0];
    let mut model = build_model(&ModelConfig::desk()).unwrap();
    model.zero_residual_head();
    let out = infer_clip(&model, &clip.corrupted, &exact()).unwrap();
    assert_eq!(out.len(), 48);
    assert_eq!(out, clip.corrupted);
}

#[test]
fn zero_head_loss_vanishes_on_caption_free_clips() {
    let gen = GenConfig {
        caption_prob: 0.0,
        ..GenConfig::with_size(32, 32, 8)
    };
    let clean: Vec<ClipPair> = (0..2).map(|s| generate_clip(s, &gen).unwrap()).collect();
    assert!(clean.iter().all(|c| c.clean == c.corrupted));
    let mut state = TrainState::new(toy_run(&[("zero_init_head", "true"), ("losses", "l1,grad_l1,ssim")])).unwrap();
    let loss = train_step(&mut state, &clean).unwrap();
    assert_eq!(loss.total, 0.0);
    assert_eq!((loss.l1, loss.grad_l1, loss.ssim_term), (0.0, 0.0, 0.0));
}

#[test]
fn zero_head_first_step_matches_the_identity_error() {
    // with a zeroed head the prediction is the corrupted centre frame, so a
    // single-frame, unaugmented, full-frame batch scores the identity L1
    let data = clips(1, 16, 16, 4);
    let mut state = TrainState::new(toy_run(&[
        ("zero_init_head", "true"),
        ("losses", "l1"),
        ("batch_size", "1"),
        ("recurrence_steps", "4"),
        ("augment_flip", "false"),
        ("jitter_brightness", "0"),
        ("jitter_contrast", "0"),
        ("jitter_saturation", "0"),
    ]))
    .unwrap();
    let loss = train_step(&mut state, &data).unwrap();
    let c = &data[0];
    let oracle: f64 = (0..4)
        .map(|t| {
            let d = c.corrupted[t]
                .data()
                .iter()
                .zip(c.clean[t].data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
            d / c.clean[t].data().len() as f64
        })
        .sum::<f64>()
        / 4.0;
    assert!((loss.l1 - oracle).abs() < 1e-12, "{} vs {oracle}", loss.l1);
}

fn restored_mse(model: &Model, data: &[ClipPair]) -> f64 {
    let cfg = exact();
    let per: Vec<f64> = data
        .iter()
        .map(|c| metrics::mse(&infer_clip(model, &c.corrupted, &cfg).unwrap(), &c.clean).unwrap())
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

#[test]
fn short_training_run_reduces_the_error() {
    let data = clips(4, 16, 16, 10);
    let mut state = TrainState::new(toy_run(&[
        ("zero_init_head", "true"),
        ("steps", "200"),
        ("learning_rate", "0.003"),
        ("losses", "l1"),
    ]))
    .unwrap();
    let before = restored_mse(&state.model, &data);
    let records = train(&mut state, &data, &TrainOptions::default()).unwrap();
    assert_eq!(records.len(), 200);
    let after = restored_mse(&state.model, &data);
    eprintln!("mse {before:.6} -> {after:.6}");
    assert!(after < before, "mse {before} -> {after}");
}

fn probe_window(cfg: &ModelConfig) -> bvd::model::WindowBatch {
    let clip = &clips(1, 16, 16, 8)[0];
    let sc = SamplerConfig {
        temporal_radius: cfg.temporal_radius,
        stride: cfg.sampling_stride,
        ..SamplerConfig::default()
    };
    sample_window(clip, 3, &sc, None).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = clips(2, 16, 16, 6);
    let mut state = TrainState::new(toy_run(&[])).unwrap();
    for _ in 0..3 {
        train_step(&mut state, &data).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.step, 3);
    assert_eq!(back.run, state.run);
    assert_eq!(back.model.parameters(), state.model.parameters());
    let win = probe_window(&state.run.model);
    assert_eq!(back.model.forward(&win).unwrap(), state.model.forward(&win).unwrap());
    // re-encoding the loaded state gives the same bytes
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());

    // the optimizer state survives too: one more step agrees bit for bit
    let mut a = state.clone();
    let mut b = back;
    assert_eq!(train_step(&mut a, &data).unwrap(), train_step(&mut b, &data).unwrap());
    assert_eq!(a.model.parameters(), b.model.parameters());
}

#[test]
fn checkpoint_rejects_other_configs_and_corruption() {
    let state = TrainState::new(toy_run(&[])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&state, &path).unwrap();

    let other = ModelConfig {
        base_channels: 6,
        ..state.run.model.clone()
    };
    assert!(matches!(
        load_checkpoint_for(&path, &other),
        Err(Error::ConfigMismatch { .. })
    ));
    assert!(load_checkpoint_for(&path, &state.run.model).is_ok());

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 40;
    bytes[last] ^= 1;
    assert!(matches!(
        decode_checkpoint(&bytes, &path),
        Err(Error::CorruptArchive { .. })
    ));
    assert!(matches!(
        decode_checkpoint(&bytes[..20], &path),
        Err(Error::CorruptArchive { .. })
    ));
}

#[test]
fn resuming_a_finished_run_changes_nothing() {
    let data = clips(2, 16, 16, 6);
    let mut state = TrainState::new(toy_run(&[("steps", "2")])).unwrap();
    train(&mut state, &data, &TrainOptions::default()).unwrap();
    let bytes = encode_checkpoint(&state);
    let records = train(&mut state, &data, &TrainOptions::default()).unwrap();
    assert!(records.is_empty());
    assert_eq!(encode_checkpoint(&state), bytes);
}

#[test]
fn seeded_runs_are_identical() {
    let data = clips(2, 16, 16, 6);
    let run = toy_run(&[("steps", "4"), ("losses", "l1,grad_l1,ssim,temporal")]);
    let go = || {
        let mut s = TrainState::new(run.clone()).unwrap();
        let rec = train(&mut s, &data, &TrainOptions::default()).unwrap();
        (encode_checkpoint(&s), rec)
    };
    let (a, ra) = go();
    let (b, rb) = go();
    assert_eq!(a, b);
    assert_eq!(ra, rb);

    let mut other = run.clone();
    other.train.seed = 8;
    let mut s = TrainState::new(other).unwrap();
    train(&mut s, &data, &TrainOptions::default()).unwrap();
    assert_ne!(encode_checkpoint(&s), a);
}

#[test]
fn outputs_only_depend_on_past_and_windowed_frames() {
    let clip = &clips(1, 16, 16, 40)[0];
    let model = build_model(&ModelConfig::toy()).unwrap();
    let cfg = exact();
    let reach = model.config().temporal_radius * model.config().sampling_stride;
    let cut = 30;
    let mut late = clip.corrupted.clone();
    for f in &mut late[cut..] {
        *f = Image::filled(3, 16, 16, 0.9);
    }
    let a = infer_clip(&model, &clip.corrupted, &cfg).unwrap();
    let b = infer_clip(&model, &late, &cfg).unwrap();
    assert_eq!(a[..cut - reach], b[..cut - reach]);
    assert_ne!(a[cut - reach], b[cut - reach]);
}

#[test]
fn inference_preserves_length() {
    let model = build_model(&ModelConfig::toy()).unwrap();
    for len in [1, 2, 7] {
        let clip = generate_clip(len as u64, &GenConfig::with_size(16, 16, len.max(2))).unwrap();
        let frames = &clip.corrupted[..len];
        let out = infer_clip(&model, frames, &InferenceConfig::default()).unwrap();
        assert_eq!(out.len(), len);
        assert!(out.iter().all(|f| f.dims() == (3, 16, 16) && f.in_unit_range()));
    }
    assert!(matches!(
        infer_clip(&model, &[], &InferenceConfig::default()),
        Err(Error::Missing(_))
    ));
}

#[test]
fn copy_back_hides_a_small_uniform_residual() {
    let gen = GenConfig {
        caption_prob: 0.0,
        ..GenConfig::with_size(16, 16, 6)
    };
    let clip = generate_clip(3, &gen).unwrap();
    let mut model = build_model(&ModelConfig::toy()).unwrap();
    model.zero_residual_head();
    let [_, bias] = model.head_parameter_indices();
    model.parameters_mut()[bias]
        .data_mut()
        .iter_mut()
        .for_each(|b| *b = 0.005);

    let kept = infer_clip(&model, &clip.corrupted, &InferenceConfig::default()).unwrap();
    assert_eq!(kept, clip.corrupted);
    // below the residual, the shift shows through wherever it is not clamped
    let shifted = infer_clip(
        &model,
        &clip.corrupted,
        &InferenceConfig {
            copy_threshold: 0.004,
            ..Default::default()
        },
    )
    .unwrap();
    assert_ne!(shifted, clip.corrupted);
}

#[test]
fn ablation_keys_select_terms() {
    let run = run_config(&[("ablation", "exp5")]);
    assert_eq!(run.loss.enabled, EnabledTerms::RECONSTRUCTION);
    assert!(!run.model.use_recurrence_stream);
    // a preset never undoes the ablation, whatever the source
    let run = run_config(&[("ablation", "exp2"), ("preset", "toy")]);
    assert_eq!(run.model.variant, bvd::model::Variant::Enc2dDec2d);
    assert_eq!(run.model.base_channels, ModelConfig::toy().base_channels);
    let file: BTreeMap<String, String> = [("ablation".to_string(), "exp3".to_string())].into();
    let cli: BTreeMap<String, String> = [("preset".to_string(), "toy".to_string())].into();
    let run = RunConfig::resolve_with_seed(&file, &cli, None).unwrap();
    assert_eq!(run.model.variant, bvd::model::Variant::Hybrid3d2d);
    assert!(!run.model.use_recurrence_stream);
}
