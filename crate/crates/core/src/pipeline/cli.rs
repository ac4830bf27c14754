//! `bvd` command line: gen-data, train, eval, decaption, bench.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use super::checkpoint::load_checkpoint;
use super::config::{read_kv_file, InferenceConfig, RunConfig, SEED_ENV};
use super::infer::infer_clip_traced;
use super::train::{train, TrainOptions, TrainState};
use crate::datagen::corpus::{frame_name, list_frames};
use crate::datagen::{read_corpus, write_corpus, GenConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::evaluate;
use crate::model::{build_model, count_parameters, ModelConfig};

#[derive(Parser, Debug)]
#[command(name = "bvd", version, about = "Blind video decaptioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus of captioned / clean clip pairs.
    GenData(GenDataArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Restore every clip of a corpus and write an evaluation report.
    Eval(EvalArgs),
    /// Restore a directory of PNG frames.
    Decaption(DecaptionArgs),
    /// Measure inference throughput.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub clips: usize,
    /// Overridden by BVD_SEED.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 48)]
    pub length: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoints, loss log and resolved config go here.
    #[arg(long)]
    pub out: PathBuf,
    /// key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    /// Any config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Continue from a checkpoint; its config is kept except for `steps`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub print_every: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub copy_threshold: f64,
}

#[derive(Args, Debug)]
pub struct DecaptionArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub copy_threshold: f64,
    /// Also write residual maps to OUT/debug.
    #[arg(long)]
    pub debug: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    /// desk, paper_scale or toy. Repeatable; defaults to desk and paper_scale.
    #[arg(long)]
    pub preset: Vec<String>,
}

/// Parse `argv` (program name first) and run. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Decaption(a) => decaption(a),
        Command::Bench(a) => bench(a),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s} is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let seed = env_seed()?.unwrap_or(a.seed);
    let gen = GenConfig::with_size(a.height, a.width, a.length);
    let m = write_corpus(a.clips, &a.out, seed, &gen)?;
    println!("wrote {} clips to {} (seed {seed})", m.clips.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cli = BTreeMap::new();
    if let Some(v) = &a.ablation {
        cli.insert("ablation".to_string(), v.clone());
    }
    if let Some(v) = a.steps {
        cli.insert("steps".into(), v.to_string());
    }
    if let Some(v) = a.seed {
        cli.insert("seed".into(), v.to_string());
    }
    if let Some(v) = a.batch_size {
        cli.insert("batch_size".into(), v.to_string());
    }
    if let Some(v) = a.crop {
        cli.insert("crop".into(), v.to_string());
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cli.insert(k.trim().to_string(), v.trim().to_string());
    }

    let mut state = match &a.resume {
        Some(p) => {
            let mut s = load_checkpoint(p)?;
            if let Some(v) = a.steps {
                s.run.train.steps = v;
            }
            s
        }
        None => {
            let file = match &a.config {
                Some(p) => read_kv_file(p)?,
                None => BTreeMap::new(),
            };
            TrainState::new(RunConfig::resolve(&file, &cli)?)?
        }
    };
    let run = &state.run;
    println!("variant={}", run.model.variant.as_str());
    println!(
        "recurrence={}",
        if run.model.use_recurrence_stream { "on" } else { "off" }
    );
    println!("losses={}", run.loss.enabled.names().join(","));
    println!("parameters={}", count_parameters(&state.model));

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let cfg_path = a.out.join("config.txt");
    std::fs::write(&cfg_path, run.to_kv()).map_err(|e| Error::io(&cfg_path, e))?;

    let corpus = read_corpus(&a.corpus)?;
    let clips = corpus.load_all()?;
    let opts = TrainOptions {
        checkpoint_dir: Some(a.out.clone()),
        log_path: Some(a.out.join("losses.jsonl")),
        print_every: a.print_every,
    };
    let start = Instant::now();
    let records = train(&mut state, &clips, &opts)?;
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        println!(
            "steps {}..{}: total {:.5} -> {:.5} in {:.1}s",
            first.step,
            last.step,
            first.losses.total,
            last.losses.total,
            start.elapsed().as_secs_f64()
        );
    }
    println!("checkpoint {}", a.out.join(super::train::FINAL_CHECKPOINT).display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let state = load_checkpoint(&a.ckpt)?;
    let corpus = read_corpus(&a.corpus)?;
    let cfg = InferenceConfig {
        copy_threshold: a.copy_threshold,
        ..Default::default()
    };
    let report = evaluate(&state.model, &corpus, &cfg, state.step)?;
    report.write(&a.report)?;
    println!("{}", report.table_row("model"));
    Ok(())
}

fn write_frames(dir: &Path, frames: &[Image]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .try_for_each(|(t, f)| f.write_png(&dir.join(frame_name(t))))
}

fn decaption(a: DecaptionArgs) -> Result<()> {
    let state = load_checkpoint(&a.ckpt)?;
    let paths = list_frames(&a.input)?;
    if paths.is_empty() {
        return Err(Error::Missing(format!("no PNG frames in {}", a.input.display())));
    }
    let frames = paths.iter().map(|p| Image::read_png(p)).collect::<Result<Vec<_>>>()?;
    let cfg = InferenceConfig {
        copy_threshold: a.copy_threshold,
        emit_debug_features: a.debug,
        output_root: Some(a.out.clone()),
    };
    let trace = infer_clip_traced(&state.model, &frames, &cfg)?;
    write_frames(&a.out, &trace.frames)?;
    if a.debug {
        let maps: Vec<Image> = trace
            .residuals
            .iter()
            .map(|r| {
                let (c, h, w) = r.dims();
                Image::from_fn(1, h, w, |_, y, x| {
                    (0..c).map(|ch| r.get(ch, y, x).abs()).fold(0.0, f64::max)
                })
            })
            .collect();
        write_frames(&a.out.join("debug"), &maps)?;
    }
    println!("wrote {} frames to {}", trace.frames.len(), a.out.display());
    Ok(())
}

/// Frames per second of [`infer_clip`](super::infer_clip) for `config`.
pub fn measure_fps(config: &ModelConfig, height: usize, width: usize, frames: usize) -> Result<f64> {
    let model = build_model(config)?;
    let clip: Vec<Image> = (0..frames.max(1))
        .map(|t| Image::from_fn(3, height, width, |c, y, x| ((c * 7 + y * 3 + x + t) % 17) as f64 / 16.0))
        .collect();
    let start = Instant::now();
    let out = super::infer::infer_clip(&model, &clip, &InferenceConfig::default())?;
    Ok(out.len() as f64 / start.elapsed().as_secs_f64())
}

fn bench(a: BenchArgs) -> Result<()> {
    let presets = if a.preset.is_empty() {
        vec!["desk".to_string(), "paper_scale".to_string()]
    } else {
        a.preset
    };
    println!("reference: 62.5 fps reported for the original GPU implementation");
    for p in presets {
        let cfg = match p.as_str() {
            "desk" => ModelConfig::desk(),
            "paper_scale" => ModelConfig::paper_scale(),
            "toy" => ModelConfig::toy(),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        let params = count_parameters(&build_model(&cfg)?);
        let fps = measure_fps(&cfg, a.height, a.width, a.frames)?;
        println!("{p:<12} {}x{}  params {params:>9}  {fps:.3} fps", a.height, a.width);
    }
    Ok(())
}
