//! Flat `key=value` run configuration.
//!
//! Resolution order: built-in defaults, then the ablation preset (if any),
//! then file keys, then command-line keys, then `BVD_SEED`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{JitterRanges, SamplerConfig};
use crate::error::{Error, Result};
use crate::losses::{EnabledTerms, LossWeights};
use crate::model::{ModelConfig, Variant};

pub const SEED_ENV: &str = "BVD_SEED";

/// Rows of the architecture / loss ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// 3-D encoder and decoder, L1.
    Exp1,
    /// 2-D encoder and decoder, L1.
    Exp2,
    /// 3-D/2-D hybrid, L1.
    Exp3,
    /// Hybrid, L1 + gradient L1.
    Exp4,
    /// Hybrid, full reconstruction loss.
    Exp5,
    /// Hybrid with the recurrence stream, reconstruction + temporal loss.
    Exp6,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Exp1,
        Ablation::Exp2,
        Ablation::Exp3,
        Ablation::Exp4,
        Ablation::Exp5,
        Ablation::Exp6,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Exp1 => "exp1",
            Ablation::Exp2 => "exp2",
            Ablation::Exp3 => "exp3",
            Ablation::Exp4 => "exp4",
            Ablation::Exp5 => "exp5",
            Ablation::Exp6 => "exp6",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?} (expected exp1..exp6)")))
    }

    pub fn variant(&self) -> Variant {
        match self {
            Ablation::Exp1 => Variant::Enc3dDec3d,
            Ablation::Exp2 => Variant::Enc2dDec2d,
            _ => Variant::Hybrid3d2d,
        }
    }

    pub fn recurrence(&self) -> bool {
        *self == Ablation::Exp6
    }

    pub fn terms(&self) -> EnabledTerms {
        match self {
            Ablation::Exp1 | Ablation::Exp2 | Ablation::Exp3 => EnabledTerms::L1_ONLY,
            Ablation::Exp4 => EnabledTerms {
                grad_l1: true,
                ..EnabledTerms::L1_ONLY
            },
            Ablation::Exp5 => EnabledTerms::RECONSTRUCTION,
            Ablation::Exp6 => EnabledTerms::ALL,
        }
    }

    pub fn apply(&self, run: &mut RunConfig) {
        run.model.variant = self.variant();
        run.model.use_recurrence_stream = self.recurrence();
        run.loss.enabled = self.terms();
        run.train.ablation = Some(*self);
    }
}

/// Which previous frame the temporal loss warps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalReference {
    /// Clean frame `t - 1`.
    GroundTruth,
    /// The model's own previous prediction.
    PreviousOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Optimizer updates.
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Consecutive frames unrolled per update.
    pub recurrence_steps: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub ablation: Option<Ablation>,
    /// Square training crop; 0 trains on full frames.
    pub crop: usize,
    pub augment_flip: bool,
    pub jitter: JitterRanges,
    pub temporal_reference: TemporalReference,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 4,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            recurrence_steps: 5,
            seed: 0,
            checkpoint_every: 500,
            ablation: None,
            crop: 32,
            augment_flip: true,
            jitter: JitterRanges::default(),
            temporal_reference: TemporalReference::GroundTruth,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recurrence_steps < 1 {
            return Err(Error::Config("recurrence_steps must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Pixels whose prediction moves less than this stay untouched.
    pub copy_threshold: f64,
    pub emit_debug_features: bool,
    pub output_root: Option<PathBuf>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            copy_threshold: 0.01,
            emit_debug_features: false,
            output_root: None,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.copy_threshold) {
            return Err(Error::Config(format!(
                "copy_threshold {} outside [0, 1)",
                self.copy_threshold
            )));
        }
        Ok(())
    }
}

/// Everything a training run needs besides data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
}

/// Parse `key=value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::Config(format!("{key}={v}: {e}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}={v}: expected a boolean"))),
    }
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

impl RunConfig {
    /// Set one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (m, t, l) = (&mut self.model, &mut self.train, &mut self.loss);
        match key {
            "preset" => {
                let keep = (m.variant, m.use_recurrence_stream, m.init_seed);
                *m = match v {
                    "desk" => ModelConfig::desk(),
                    "paper_scale" => ModelConfig::paper_scale(),
                    "toy" => ModelConfig::toy(),
                    _ => return Err(Error::Config(format!("unknown preset {v:?}"))),
                };
                (m.variant, m.use_recurrence_stream, m.init_seed) = keep;
            }
            "ablation" => Ablation::parse(v)?.apply(self),
            "temporal_radius" => m.temporal_radius = num(key, v)?,
            "sampling_stride" => m.sampling_stride = num(key, v)?,
            "base_channels" => m.base_channels = num(key, v)?,
            "encoder_depth" => m.encoder_depth = num(key, v)?,
            "bottleneck_dilations" => m.bottleneck_dilations = list(key, v)?,
            "use_recurrence_stream" => m.use_recurrence_stream = boolean(key, v)?,
            "variant" => m.variant = Variant::parse(v)?,
            "io_channels" => m.io_channels = num(key, v)?,
            "init_seed" => m.init_seed = num(key, v)?,
            "zero_init_head" => m.zero_init_head = boolean(key, v)?,
            "steps" => t.steps = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "learning_rate" => t.learning_rate = num(key, v)?,
            "adam_beta1" => t.adam_beta1 = num(key, v)?,
            "adam_beta2" => t.adam_beta2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "recurrence_steps" => t.recurrence_steps = num(key, v)?,
            "seed" => {
                t.seed = num(key, v)?;
                m.init_seed = t.seed;
            }
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "crop" => t.crop = num(key, v)?,
            "augment_flip" => t.augment_flip = boolean(key, v)?,
            "jitter_brightness" => t.jitter.brightness = num(key, v)?,
            "jitter_contrast" => t.jitter.contrast = num(key, v)?,
            "jitter_saturation" => t.jitter.saturation = num(key, v)?,
            "temporal_reference" => {
                t.temporal_reference = match v {
                    "ground_truth" => TemporalReference::GroundTruth,
                    "previous_output" => TemporalReference::PreviousOutput,
                    _ => return Err(Error::Config(format!("unknown temporal_reference {v:?}"))),
                }
            }
            "lambda_r" => l.lambda_r = num(key, v)?,
            "lambda_t" => l.lambda_t = num(key, v)?,
            "ssim_window" => l.ssim_window = num(key, v)?,
            "ssim_c1" => l.ssim_c1 = num(key, v)?,
            "ssim_c2" => l.ssim_c2 = num(key, v)?,
            "losses" => l.enabled = EnabledTerms::parse(v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by `file` keys, then `cli` keys, then `BVD_SEED`.
    /// `preset` and then `ablation` are applied before any other key.
    pub fn resolve(file: &BTreeMap<String, String>, cli: &BTreeMap<String, String>) -> Result<RunConfig> {
        let env_seed = std::env::var(SEED_ENV).ok();
        RunConfig::resolve_with_seed(file, cli, env_seed.as_deref())
    }

    pub fn resolve_with_seed(
        file: &BTreeMap<String, String>,
        cli: &BTreeMap<String, String>,
        env_seed: Option<&str>,
    ) -> Result<RunConfig> {
        let mut run = RunConfig::default();
        // a preset replaces the whole model config, so it goes first and the
        // ablation is layered on top of it
        for key in ["preset", "ablation"] {
            if let Some(v) = cli.get(key).or_else(|| file.get(key)) {
                run.set(key, v)?;
            }
        }
        for src in [file, cli] {
            // seed also sets init_seed, so it precedes an explicit init_seed
            if let Some(v) = src.get("seed") {
                run.set("seed", v)?;
            }
            for (k, v) in src {
                if !["ablation", "preset", "seed"].contains(&k.as_str()) {
                    run.set(k, v)?;
                }
            }
        }
        if let Some(s) = env_seed {
            run.set("seed", s)?;
        }
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if self.train.crop > 0 {
            self.model.check_spatial(self.train.crop, self.train.crop)?;
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            temporal_radius: self.model.temporal_radius,
            stride: self.model.sampling_stride,
            augment_flip: self.train.augment_flip,
            augment_color_jitter: self.train.jitter,
        }
    }

    /// Key=value dump that [`parse_kv`] + [`RunConfig::resolve`] read back.
    pub fn to_kv(&self) -> String {
        let (m, t, l) = (&self.model, &self.train, &self.loss);
        let dil: Vec<String> = m.bottleneck_dilations.iter().map(|d| d.to_string()).collect();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        if let Some(a) = t.ablation {
            put("ablation", a.as_str().into());
        }
        put("variant", m.variant.as_str().into());
        put("use_recurrence_stream", m.use_recurrence_stream.to_string());
        put("temporal_radius", m.temporal_radius.to_string());
        put("sampling_stride", m.sampling_stride.to_string());
        put("base_channels", m.base_channels.to_string());
        put("encoder_depth", m.encoder_depth.to_string());
        put("bottleneck_dilations", dil.join(","));
        put("io_channels", m.io_channels.to_string());
        put("zero_init_head", m.zero_init_head.to_string());
        put("steps", t.steps.to_string());
        put("batch_size", t.batch_size.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("adam_beta1", t.adam_beta1.to_string());
        put("adam_beta2", t.adam_beta2.to_string());
        put("adam_eps", t.adam_eps.to_string());
        put("recurrence_steps", t.recurrence_steps.to_string());
        put("seed", t.seed.to_string());
        put("init_seed", m.init_seed.to_string());
        put("checkpoint_every", t.checkpoint_every.to_string());
        put("crop", t.crop.to_string());
        put("augment_flip", t.augment_flip.to_string());
        put("jitter_brightness", t.jitter.brightness.to_string());
        put("jitter_contrast", t.jitter.contrast.to_string());
        put("jitter_saturation", t.jitter.saturation.to_string());
        put(
            "temporal_reference",
            match t.temporal_reference {
                TemporalReference::GroundTruth => "ground_truth".into(),
                TemporalReference::PreviousOutput => "previous_output".into(),
            },
        );
        put("lambda_r", l.lambda_r.to_string());
        put("lambda_t", l.lambda_t.to_string());
        put("ssim_window", l.ssim_window.to_string());
        put("ssim_c1", l.ssim_c1.to_string());
        put("ssim_c2", l.ssim_c2.to_string());
        put("losses", l.enabled.names().join(","));
        s
    }
}
