//! Windowed sampling with temporal mirror padding, plus training augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ClipPair;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::WindowBatch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterRanges {
    /// Additive offset drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - contrast, 1 + contrast]`.
    pub contrast: f64,
    /// Saturation factor drawn from `[1 - saturation, 1 + saturation]`.
    pub saturation: f64,
}

impl JitterRanges {
    pub const NONE: JitterRanges = JitterRanges {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
    };
}

impl Default for JitterRanges {
    fn default() -> Self {
        JitterRanges {
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temporal_radius: usize,
    pub stride: usize,
    pub augment_flip: bool,
    pub augment_color_jitter: JitterRanges,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temporal_radius: 2,
            stride: 3,
            augment_flip: true,
            augment_color_jitter: JitterRanges::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temporal_radius < 1 || self.stride < 1 {
            return Err(Error::Config("sampler needs N >= 1 and stride >= 1".into()));
        }
        let j = self.augment_color_jitter;
        if j.brightness < 0.0 || !(0.0..1.0).contains(&j.contrast) || !(0.0..1.0).contains(&j.saturation) {
            return Err(Error::Config(format!("bad jitter ranges {j:?}")));
        }
        Ok(())
    }

    /// Frames spanned by one window, centre included.
    pub fn view_range(&self) -> usize {
        2 * self.temporal_radius * self.stride + 1
    }
}

/// Mirror an index into `[0, len)` without repeating the border frame.
pub fn reflect_index(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let r = i.rem_euclid(period);
    if r < len as i64 {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Source indices `t + k·stride` for `k = -n..=n`, reflected into the clip.
pub fn window_indices(t: usize, len: usize, n: usize, stride: usize) -> Result<Vec<usize>> {
    if t >= len {
        return Err(Error::OutOfRange { index: t, len });
    }
    let n = n as i64;
    Ok((-n..=n)
        .map(|k| reflect_index(t as i64 + k * stride as i64, len))
        .collect())
}

/// Window centred on frame `t`.
///
/// Without a previous output the recurrence input falls back to
/// `corrupted[t - 1]`, or to `corrupted[0]` at `t = 0`.
pub fn sample_window(
    clip: &ClipPair,
    t: usize,
    cfg: &SamplerConfig,
    prev_output: Option<&Image>,
) -> Result<WindowBatch> {
    cfg.validate()?;
    let idx = window_indices(t, clip.len(), cfg.temporal_radius, cfg.stride)?;
    let sources = idx.iter().map(|&i| clip.corrupted[i].clone()).collect();
    let prev = match prev_output {
        Some(p) => p.clone(),
        None => clip.corrupted[t.saturating_sub(1)].clone(),
    };
    WindowBatch::new(sources, prev, Some(clip.clean[t].clone()))
}

/// One draw of the augmentation, shared by every member of a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip: false,
        brightness: 0.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub fn sample<R: Rng>(rng: &mut R, cfg: &SamplerConfig) -> Augmentation {
        let j = cfg.augment_color_jitter;
        let flip = cfg.augment_flip && rng.gen_bool(0.5);
        let mut draw = |r: f64, centre: f64| {
            if r > 0.0 {
                rng.gen_range(centre - r..=centre + r)
            } else {
                centre
            }
        };
        Augmentation {
            flip,
            brightness: draw(j.brightness, 0.0),
            contrast: draw(j.contrast, 1.0),
            saturation: draw(j.saturation, 1.0),
        }
    }

    pub fn is_photometric_identity(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 1.0 && self.saturation == 1.0
    }

    /// Brightness, then contrast around 0.5, then saturation around the
    /// per-pixel luma; clamped to `[0, 1]`. Unit factors are skipped so the
    /// identity is exact.
    pub fn apply_color(&self, img: &Image) -> Image {
        if self.is_photometric_identity() {
            return img.clone();
        }
        let mut out = img.clone();
        if self.brightness != 0.0 {
            out.data_mut().iter_mut().for_each(|v| *v += self.brightness);
        }
        if self.contrast != 1.0 {
            out.data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.5 + self.contrast * (*v - 0.5));
        }
        let (c, h, w) = out.dims();
        if self.saturation != 1.0 && c == 3 {
            for y in 0..h {
                for x in 0..w {
                    let rgb = [out.get(0, y, x), out.get(1, y, x), out.get(2, y, x)];
                    let luma = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                    for (ch, v) in rgb.iter().enumerate() {
                        out.set(ch, y, x, luma + self.saturation * (v - luma));
                    }
                }
            }
        }
        out.clamp01()
    }

    pub fn apply(&self, img: &Image) -> Image {
        let out = self.apply_color(img);
        if self.flip {
            out.flip_horizontal()
        } else {
            out
        }
    }

    pub fn apply_window(&self, batch: &WindowBatch) -> Result<WindowBatch> {
        WindowBatch::new(
            batch.source_frames.iter().map(|f| self.apply(f)).collect(),
            self.apply(&batch.prev_output),
            batch.target_frame.as_ref().map(|f| self.apply(f)),
        )
    }
}

/// Draw one augmentation and apply it to every member of `batch`.
pub fn augment<R: Rng>(batch: &WindowBatch, cfg: &SamplerConfig, rng: &mut R) -> Result<WindowBatch> {
    Augmentation::sample(rng, cfg).apply_window(batch)
}
