//! MSE, PSNR, DSSIM and warping error, and the per-corpus evaluation report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{ClipPair, Corpus, StepFlow};
use crate::error::{Error, Result};
use crate::flowwarp::{self, FlowField, OcclusionMask};
use crate::image::Image;
use crate::losses::{self, LossWeights};
use crate::model::Model;
use crate::pipeline::{infer_clip, InferenceConfig};

/// PSNR reported for frames whose MSE is below [`PSNR_EXACT_MSE`].
pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_EXACT_MSE: f64 = 1e-10;

fn check_sequences(pred: &[Image], target: &[Image]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} frames vs {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty frame sequence".into()));
    }
    pred.iter().zip(target).try_for_each(|(a, b)| a.same_dims(b))
}

pub fn frame_mse(pred: &Image, target: &Image) -> Result<f64> {
    pred.same_dims(target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.data().len() as f64)
}

/// Mean squared difference over every element of every frame.
pub fn mse(pred: &[Image], target: &[Image]) -> Result<f64> {
    check_sequences(pred, target)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in pred.iter().zip(target) {
        sum += a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
        n += a.data().len();
    }
    Ok(sum / n as f64)
}

/// `-10 log10(mse)` with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_EXACT_MSE {
        PSNR_CAP_DB
    } else {
        -10.0 * mse.log10()
    }
}

/// Per-frame PSNR averaged over frames.
pub fn psnr(pred: &[Image], target: &[Image]) -> Result<f64> {
    check_sequences(pred, target)?;
    let mut acc = 0.0;
    for (a, b) in pred.iter().zip(target) {
        acc += psnr_from_mse(frame_mse(a, b)?);
    }
    Ok(acc / pred.len() as f64)
}

/// PSNR of the MSE pooled over the whole sequence.
pub fn psnr_pooled(pred: &[Image], target: &[Image]) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target)?))
}

/// Per-frame `(1 - ssim) / 2` averaged over frames.
pub fn dssim(pred: &[Image], target: &[Image], weights: &LossWeights) -> Result<f64> {
    check_sequences(pred, target)?;
    let mut acc = 0.0;
    for (a, b) in pred.iter().zip(target) {
        acc += (1.0 - losses::ssim(a, b, weights)?) / 2.0;
    }
    Ok(acc / pred.len() as f64)
}

/// Masked mean Euclidean colour distance between `frame` and `prev` warped
/// by `flow`. An empty mask gives 0.
pub fn warping_error(frame: &Image, prev: &Image, flow: &FlowField, mask: &OcclusionMask) -> Result<f64> {
    frame.same_dims(prev)?;
    let warped = flowwarp::warp(prev, flow)?;
    let (c, h, w) = frame.dims();
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !mask.is_valid(y, x) {
                continue;
            }
            let d2: f64 = (0..c)
                .map(|ch| {
                    let d = frame.get(ch, y, x) - warped.get(ch, y, x);
                    d * d
                })
                .sum();
            acc += d2.sqrt();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { acc / n as f64 })
}

/// Mean warping error over consecutive pairs. `flows[i]` and `masks[i]`
/// align frame `i` to frame `i + 1`.
pub fn temporal_error(frames: &[Image], flows: &[FlowField], masks: &[OcclusionMask]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::Shape("temporal error needs at least two frames".into()));
    }
    let pairs = frames.len() - 1;
    if flows.len() != pairs || masks.len() != pairs {
        return Err(Error::Shape(format!(
            "{} frames need {pairs} flows and masks, got {} and {}",
            frames.len(),
            flows.len(),
            masks.len()
        )));
    }
    let mut acc = 0.0;
    for i in 0..pairs {
        acc += warping_error(&frames[i + 1], &frames[i], &flows[i], &masks[i])?;
    }
    Ok(acc / pairs as f64)
}

/// [`temporal_error`] using a clip's backward flows and masks.
pub fn clip_temporal_error(frames: &[Image], steps: &[StepFlow]) -> Result<f64> {
    let flows: Vec<FlowField> = steps.iter().map(|s| s.backward.clone()).collect();
    let masks: Vec<OcclusionMask> = steps.iter().map(|s| s.mask.clone()).collect();
    temporal_error(frames, &flows, &masks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub mse: f64,
    pub psnr_db: f64,
    pub psnr_pooled_db: f64,
    pub dssim: f64,
    pub temporal_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mse: f64,
    pub psnr_db: f64,
    pub psnr_pooled_db: f64,
    pub dssim: f64,
    pub temporal_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub checkpoint_step: u64,
    pub frame_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_clip: Vec<ClipMetrics>,
    pub aggregate: AggregateMetrics,
    pub meta: ReportMeta,
}

impl EvalReport {
    /// Sorts by clip id and averages.
    pub fn from_clips(mut per_clip: Vec<ClipMetrics>, meta: ReportMeta) -> Result<EvalReport> {
        if per_clip.is_empty() {
            return Err(Error::Missing("no clips to report".into()));
        }
        per_clip.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let n = per_clip.len() as f64;
        let mean = |f: fn(&ClipMetrics) -> f64| per_clip.iter().map(f).sum::<f64>() / n;
        let aggregate = AggregateMetrics {
            mse: mean(|c| c.mse),
            psnr_db: mean(|c| c.psnr_db),
            psnr_pooled_db: mean(|c| c.psnr_pooled_db),
            dssim: mean(|c| c.dssim),
            temporal_error: mean(|c| c.temporal_error),
        };
        Ok(EvalReport {
            per_clip,
            aggregate,
            meta,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One row with the MSE, PSNR and DSSIM columns.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<12} MSE {:.5}  PSNR {:.4}  DSSIM {:.4}",
            self.aggregate.mse, self.aggregate.psnr_db, self.aggregate.dssim
        )
    }
}

/// Metrics of one restored clip against its clean frames.
pub fn clip_metrics(clip_id: &str, restored: &[Image], clip: &ClipPair, weights: &LossWeights) -> Result<ClipMetrics> {
    Ok(ClipMetrics {
        clip_id: clip_id.to_string(),
        mse: mse(restored, &clip.clean)?,
        psnr_db: psnr(restored, &clip.clean)?,
        psnr_pooled_db: psnr_pooled(restored, &clip.clean)?,
        dssim: dssim(restored, &clip.clean, weights)?,
        temporal_error: clip_temporal_error(restored, &clip.flows)?,
    })
}

/// Report for the unmodified corrupted input.
pub fn baseline_report(corpus: &Corpus) -> Result<EvalReport> {
    let weights = LossWeights::default();
    let mut per_clip = Vec::new();
    let mut frames = 0;
    for (i, id) in corpus.clip_ids().iter().enumerate() {
        let clip = corpus.load_clip(i)?;
        frames += clip.len();
        per_clip.push(clip_metrics(id, &clip.corrupted, &clip, &weights)?);
    }
    EvalReport::from_clips(
        per_clip,
        ReportMeta {
            config_hash: "identity".into(),
            checkpoint_step: 0,
            frame_count: frames,
        },
    )
}

/// Restore every clip of `corpus` with `model` and score it.
pub fn evaluate(model: &Model, corpus: &Corpus, cfg: &InferenceConfig, step: u64) -> Result<EvalReport> {
    let weights = LossWeights::default();
    let mut per_clip = Vec::new();
    let mut frames = 0;
    for (i, id) in corpus.clip_ids().iter().enumerate() {
        let clip = corpus.load_clip(i)?;
        let restored = infer_clip(model, &clip.corrupted, cfg)?;
        frames += restored.len();
        per_clip.push(clip_metrics(id, &restored, &clip, &weights)?);
    }
    EvalReport::from_clips(
        per_clip,
        ReportMeta {
            config_hash: model.config().hash(),
            checkpoint_step: step,
            frame_count: frames,
        },
    )
}
