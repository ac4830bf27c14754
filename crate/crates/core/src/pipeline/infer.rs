//! Auto-regressive sliding-window inference.

use crate::datagen::window_indices;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Model, WindowBatch};

use super::InferenceConfig;

/// Keep `input` wherever the prediction moved every channel by less than
/// `threshold`, otherwise take the prediction.
pub fn copy_back(input: &Image, prediction: &Image, threshold: f64) -> Result<Image> {
    input.same_dims(prediction)?;
    let (c, h, w) = input.dims();
    let mut out = prediction.clone();
    for y in 0..h {
        for x in 0..w {
            let diff = (0..c)
                .map(|ch| (input.get(ch, y, x) - prediction.get(ch, y, x)).abs())
                .fold(0.0, f64::max);
            if diff < threshold {
                for ch in 0..c {
                    out.set(ch, y, x, input.get(ch, y, x));
                }
            }
        }
    }
    Ok(out)
}

/// Restored frames plus the raw network residual of each step.
#[derive(Clone, Debug)]
pub struct InferenceTrace {
    pub frames: Vec<Image>,
    pub residuals: Vec<Image>,
}

/// Restore a clip frame by frame. Frame `t` sees the reflected window around
/// `t` and the restored frame `t - 1` (`corrupted[0]` at the start).
pub fn infer_clip(model: &Model, corrupted: &[Image], cfg: &InferenceConfig) -> Result<Vec<Image>> {
    Ok(infer_clip_traced(model, corrupted, cfg)?.frames)
}

pub fn infer_clip_traced(model: &Model, corrupted: &[Image], cfg: &InferenceConfig) -> Result<InferenceTrace> {
    cfg.validate()?;
    let first = corrupted
        .first()
        .ok_or_else(|| Error::Missing("no frames to restore".into()))?;
    let (_, h, w) = first.dims();
    let mc = model.config();
    mc.check_spatial(h, w)?;
    let mut frames: Vec<Image> = Vec::with_capacity(corrupted.len());
    let mut residuals = Vec::with_capacity(corrupted.len());
    for t in 0..corrupted.len() {
        let idx = window_indices(t, corrupted.len(), mc.temporal_radius, mc.sampling_stride)?;
        let sources = idx.iter().map(|&i| corrupted[i].clone()).collect();
        let prev = frames.last().unwrap_or(first).clone();
        let batch = WindowBatch::new(sources, prev, None)?;
        let out = model.forward(&batch)?;
        frames.push(copy_back(&batch.center_frame, &out.prediction, cfg.copy_threshold)?);
        if cfg.emit_debug_features {
            residuals.push(out.residual);
        }
    }
    Ok(InferenceTrace { frames, residuals })
}
