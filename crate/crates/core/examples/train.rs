//! Train a small model on a freshly generated corpus, then resume it from
//! its checkpoint.
//!
//! ```text
//! cargo run --release --example train -- [ablation] [steps]
//! ```

use std::collections::BTreeMap;

use bvd::datagen::{generate_clip, GenConfig};
use bvd::model::count_parameters;
use bvd::pipeline::{load_checkpoint, train, RunConfig, TrainOptions, TrainState, FINAL_CHECKPOINT};

fn main() -> bvd::Result<()> {
    let mut args = std::env::args().skip(1);
    let ablation = args.next().unwrap_or_else(|| "exp6".into());
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);

    let clips = (0..4)
        .map(|s| generate_clip(s, &GenConfig::with_size(32, 32, 16)))
        .collect::<bvd::Result<Vec<_>>>()?;

    // the same keys a config file or `train --set` accepts
    let cli: BTreeMap<String, String> = [
        ("ablation", ablation.as_str()),
        ("base_channels", "8"),
        ("crop", "32"),
        ("batch_size", "2"),
        ("recurrence_steps", "3"),
        ("checkpoint_every", "20"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .chain([("steps".to_string(), steps.to_string())])
    .collect();
    let run = RunConfig::resolve(&BTreeMap::new(), &cli)?;
    println!("{ablation}: losses {:?}", run.loss.enabled.names());

    let dir = std::env::temp_dir().join("bvd_train_example");
    let _ = std::fs::remove_dir_all(&dir);
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.clone()),
        log_path: Some(dir.join("losses.jsonl")),
        print_every: 10,
    };
    let mut state = TrainState::new(run)?;
    println!("{} parameters", count_parameters(&state.model));
    let records = train(&mut state, &clips, &opts)?;
    let first = records.first().map_or(0.0, |r| r.losses.total);
    let last = records.last().map_or(0.0, |r| r.losses.total);
    println!("loss {first:.5} -> {last:.5} over {} steps", records.len());

    // resuming picks up the optimizer state and continues the step count
    let mut resumed = load_checkpoint(&dir.join(FINAL_CHECKPOINT))?;
    resumed.run.train.steps += 10;
    train(&mut resumed, &clips, &TrainOptions::default())?;
    println!("resumed to step {}; checkpoints in {}", resumed.step, dir.display());
    Ok(())
}
