//! Synthetic (corrupted, clean) clip pairs.
//!
//! Clean clips are procedural: a textured colour gradient panning with an
//! integer per-frame translation and a few textured sprites moving with
//! integer velocities, bouncing inside the frame. Because every motion is an
//! integer translation of rigid content, the flows returned with each clip
//! describe the clean frames exactly outside occlusions.
//!
//! Captions come from the built-in bitmap font and follow a schedule of
//! segments that switch independently of the scene.

pub mod corpus;
pub mod glyphs;
pub mod sampler;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowwarp::{self, FlowField, OcclusionMask, SceneMotion, SpriteMotion, SpriteShape};
use crate::image::Image;

pub use corpus::{read_corpus, write_corpus, Corpus, CorpusManifest, ManifestEntry};
pub use sampler::{augment, reflect_index, sample_window, window_indices, Augmentation, JitterRanges, SamplerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shadow {
    None,
    /// Semi-transparent drop shadow.
    Soft,
    /// Opaque drop shadow.
    Solid,
}

impl Shadow {
    pub fn as_str(&self) -> &'static str {
        match self {
            Shadow::None => "none",
            Shadow::Soft => "soft",
            Shadow::Solid => "solid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Shadow::None),
            "soft" => Ok(Shadow::Soft),
            "solid" => Ok(Shadow::Solid),
            other => Err(Error::Config(format!("unknown shadow {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionSpec {
    pub text: String,
    pub font_scale: f64,
    /// Top-left corner, pixels.
    pub position: (usize, usize),
    pub fill_color: [f64; 3],
    pub alpha: f64,
    pub shadow: Shadow,
    pub shadow_alpha: f64,
}

impl CaptionSpec {
    /// Rendered `(width, height)` in pixels, shadow excluded.
    pub fn extent(&self) -> (usize, usize) {
        let (w, h) = glyphs::text_extent(self.text.chars().count());
        (
            (w as f64 * self.font_scale).ceil() as usize,
            (h as f64 * self.font_scale).ceil() as usize,
        )
    }

    pub fn shadow_offset(&self) -> usize {
        if self.shadow == Shadow::None {
            0
        } else {
            self.font_scale.ceil().max(1.0) as usize
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("caption alpha {} outside (0, 1]", self.alpha)));
        }
        if self.font_scale <= 0.0 {
            return Err(Error::Config("font_scale must be positive".into()));
        }
        if self.shadow == Shadow::Soft && !(self.shadow_alpha > 0.0 && self.shadow_alpha < 1.0) {
            return Err(Error::Config("a soft shadow needs 0 < shadow_alpha < 1".into()));
        }
        Ok(())
    }

    fn inked(&self, text: &[char], x: usize, y: usize) -> bool {
        let (px, py) = self.position;
        if x < px || y < py {
            return false;
        }
        let col = ((x - px) as f64 / self.font_scale).floor() as usize;
        let row = ((y - py) as f64 / self.font_scale).floor() as usize;
        glyphs::text_pixel(text, col, row)
    }
}

/// Composite a caption over `clean`, returning the corrupted frame and the
/// combined overlay opacity.
///
/// Per pixel, with shadow opacity `a_s` and glyph opacity `a_g`:
/// `out = (1-a_g)·((1-a_s)·clean + a_s·black) + a_g·fill`, and the overlay
/// opacity is `1 - (1-a_s)(1-a_g)`. Pixels with zero opacity are copied.
pub fn composite_caption(clean: &Image, caption: &CaptionSpec) -> Result<(Image, Image)> {
    caption.validate()?;
    let (c, h, w) = clean.dims();
    let (tw, th) = caption.extent();
    let off = caption.shadow_offset();
    let (px, py) = caption.position;
    if px + tw + off > w || py + th + off > h {
        return Err(Error::CaptionTooLarge(format!(
            "{:?} at {:?} needs {}x{} but the frame is {}x{}",
            caption.text,
            caption.position,
            tw + off,
            th + off,
            w,
            h
        )));
    }
    let text: Vec<char> = caption.text.chars().collect();
    let mut out = clean.clone();
    let mut alpha = Image::new(1, h, w);
    for y in py..(py + th + off).min(h) {
        for x in px..(px + tw + off).min(w) {
            let a_g = if caption.inked(&text, x, y) { caption.alpha } else { 0.0 };
            let a_s = if off > 0 && x >= off && y >= off && caption.inked(&text, x - off, y - off) {
                match caption.shadow {
                    Shadow::Soft => caption.shadow_alpha,
                    Shadow::Solid => 1.0,
                    Shadow::None => 0.0,
                }
            } else {
                0.0
            };
            if a_g == 0.0 && a_s == 0.0 {
                continue;
            }
            for ch in 0..c {
                let fill = caption.fill_color[ch.min(2)];
                let under = (1.0 - a_s) * clean.get(ch, y, x);
                out.set(ch, y, x, (1.0 - a_g) * under + a_g * fill);
            }
            alpha.set(0, y, x, 1.0 - (1.0 - a_s) * (1.0 - a_g));
        }
    }
    Ok((out, alpha))
}

/// A caption shown on frames `start..end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionSegment {
    pub start: usize,
    pub end: usize,
    pub caption: CaptionSpec,
}

/// Exact flows between frame `t - 1` and frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFlow {
    /// On frame `t - 1`, pointing into `t`.
    pub forward: FlowField,
    /// On frame `t`, pointing into `t - 1`.
    pub backward: FlowField,
    /// Valid pixels of frame `t` for the backward flow.
    pub mask: OcclusionMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipPair {
    pub clean: Vec<Image>,
    pub corrupted: Vec<Image>,
    /// Overlay opacity per frame. Kept for evaluation, never fed to a model.
    pub overlay_alpha: Vec<Image>,
    /// `flows[t - 1]` relates frames `t - 1` and `t`.
    pub flows: Vec<StepFlow>,
    pub seed: u64,
    pub caption_schedule: Vec<CaptionSegment>,
}

impl ClipPair {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.clean[0].dims()
    }

    /// Flow and mask that align frame `t - 1` with frame `t` (`t >= 1`).
    pub fn step(&self, t: usize) -> Option<&StepFlow> {
        t.checked_sub(1).and_then(|i| self.flows.get(i))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    pub length: usize,
    pub sprites: (usize, usize),
    /// Largest absolute background pan per frame, pixels.
    pub pan_max: i64,
    /// Largest absolute sprite speed per frame, pixels.
    pub sprite_speed_max: i64,
    /// Segment lengths of the caption schedule, frames.
    pub segment_len: (usize, usize),
    /// Probability that a segment carries a caption.
    pub caption_prob: f64,
    pub text_len: (usize, usize),
    pub font_scale: (f64, f64),
    pub alpha: (f64, f64),
    pub soft_shadow_alpha: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::with_size(128, 128, 48)
    }
}

impl GenConfig {
    pub fn with_size(height: usize, width: usize, length: usize) -> Self {
        let s = height.min(width) as f64 / 64.0;
        GenConfig {
            height,
            width,
            length,
            sprites: (2, 4),
            pan_max: 1,
            sprite_speed_max: 2,
            segment_len: (8, 20),
            caption_prob: 0.8,
            text_len: (3, 8),
            font_scale: (s, 2.0 * s),
            alpha: (0.6, 1.0),
            soft_shadow_alpha: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 || self.length < 2 {
            return Err(Error::Config(format!(
                "clip {}x{}x{} is too small",
                self.length, self.height, self.width
            )));
        }
        if self.sprites.0 > self.sprites.1
            || self.segment_len.0 < 1
            || self.segment_len.0 > self.segment_len.1
            || self.text_len.0 < 1
            || self.text_len.0 > self.text_len.1
            || self.font_scale.0 <= 0.0
            || self.font_scale.0 > self.font_scale.1
            || !(self.alpha.0 > 0.0 && self.alpha.0 <= self.alpha.1 && self.alpha.1 <= 1.0)
            || !(0.0..=1.0).contains(&self.caption_prob)
        {
            return Err(Error::Config("inconsistent generator ranges".into()));
        }
        let min_caption = CaptionSpec {
            text: "X".repeat(self.text_len.0),
            font_scale: self.font_scale.0,
            position: (0, 0),
            fill_color: [1.0; 3],
            alpha: 1.0,
            shadow: Shadow::Solid,
            shadow_alpha: 1.0,
        };
        let (tw, th) = min_caption.extent();
        let off = min_caption.shadow_offset();
        if tw + off > self.width || th + off > self.height {
            return Err(Error::CaptionTooLarge(format!(
                "a {}-character caption at scale {} needs {}x{}, frame is {}x{}",
                self.text_len.0,
                self.font_scale.0,
                tw + off,
                th + off,
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Sprite {
    shape: SpriteShape,
    start: (i64, i64),
    velocity: (i64, i64),
    color: [f64; 3],
    stripe_period: f64,
    stripe_angle: f64,
}

impl Sprite {
    /// Integer centre at frame `t`, bouncing inside `[0, w) × [0, h)`.
    fn center(&self, t: usize, h: usize, w: usize) -> (f64, f64) {
        let bounce = |p0: i64, v: i64, n: usize| -> i64 {
            let n = n as i64;
            if n <= 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let raw = (p0 + v * t as i64).rem_euclid(period);
            if raw < n {
                raw
            } else {
                period - raw
            }
        };
        (
            bounce(self.start.0, self.velocity.0, w) as f64,
            bounce(self.start.1, self.velocity.1, h) as f64,
        )
    }

    fn shade(&self, ux: f64, uy: f64) -> [f64; 3] {
        let phase = (ux * self.stripe_angle.cos() + uy * self.stripe_angle.sin()) / self.stripe_period;
        let k = 0.7 + 0.3 * (std::f64::consts::TAU * phase).sin();
        [self.color[0] * k, self.color[1] * k, self.color[2] * k]
    }
}

#[derive(Clone, Debug)]
struct Background {
    base: [f64; 3],
    tilt: [f64; 3],
    freq: (f64, f64),
    texture: f64,
}

impl Background {
    fn shade(&self, wx: i64, wy: i64, h: usize, w: usize) -> [f64; 3] {
        let (fx, fy) = (wx as f64 / w as f64, wy as f64 / h as f64);
        let wave = (std::f64::consts::TAU * (self.freq.0 * fx + self.freq.1 * fy)).sin()
            * (std::f64::consts::TAU * self.freq.1 * fx).cos();
        // integer hash so that the texture translates exactly with the pan
        let hash = ((wx.wrapping_mul(73_856_093) ^ wy.wrapping_mul(19_349_663)).rem_euclid(1009)) as f64 / 1008.0;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.base[c] + self.tilt[c] * (fx + fy).sin() + self.texture * (0.6 * wave + 0.4 * (hash - 0.5));
        }
        out
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

fn random_caption(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> CaptionSpec {
    let alphabet: Vec<char> = glyphs::ALPHABET.chars().collect();
    loop {
        let len = rng.gen_range(cfg.text_len.0..=cfg.text_len.1);
        let mut text: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        if len >= 5 && rng.gen_bool(0.3) {
            let cut = rng.gen_range(2..len - 1);
            text.replace_range(cut..cut + 1, " ");
        }
        let font_scale = if cfg.font_scale.0 < cfg.font_scale.1 {
            rng.gen_range(cfg.font_scale.0..=cfg.font_scale.1)
        } else {
            cfg.font_scale.0
        };
        let shadow = match rng.gen_range(0..3) {
            0 => Shadow::None,
            1 => Shadow::Soft,
            _ => Shadow::Solid,
        };
        let palette = [[1.0, 1.0, 1.0], [1.0, 1.0, 0.2], [0.2, 1.0, 1.0], [1.0, 0.6, 0.1]];
        let fill_color = if rng.gen_bool(0.7) {
            palette[rng.gen_range(0..palette.len())]
        } else {
            random_color(rng, 0.0, 1.0)
        };
        let alpha = if cfg.alpha.0 < cfg.alpha.1 {
            rng.gen_range(cfg.alpha.0..=cfg.alpha.1)
        } else {
            cfg.alpha.0
        };
        let mut spec = CaptionSpec {
            text,
            font_scale,
            position: (0, 0),
            fill_color,
            alpha,
            shadow,
            shadow_alpha: match shadow {
                Shadow::Soft => cfg.soft_shadow_alpha,
                Shadow::Solid => 1.0,
                Shadow::None => 0.0,
            },
        };
        let (tw, th) = spec.extent();
        let off = spec.shadow_offset();
        if tw + off > cfg.width || th + off > cfg.height {
            continue;
        }
        let x = rng.gen_range(0..=cfg.width - tw - off);
        let y_lo = (cfg.height / 3).min(cfg.height - th - off);
        let y = rng.gen_range(y_lo..=cfg.height - th - off);
        spec.position = (x, y);
        return spec;
    }
}

fn caption_schedule(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Vec<CaptionSegment> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < cfg.length {
        let len = rng.gen_range(cfg.segment_len.0..=cfg.segment_len.1);
        let end = (t + len).min(cfg.length);
        if rng.gen_bool(cfg.caption_prob) {
            out.push(CaptionSegment {
                start: t,
                end,
                caption: random_caption(rng, cfg),
            });
        }
        t = end;
    }
    out
}

/// Deterministic clip for `seed`.
pub fn generate_clip(seed: u64, cfg: &GenConfig) -> Result<ClipPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height, cfg.width);

    let background = Background {
        base: random_color(&mut rng, 0.2, 0.7),
        tilt: random_color(&mut rng, -0.15, 0.15),
        freq: (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)),
        texture: rng.gen_range(0.05..0.2),
    };
    let pan = (
        rng.gen_range(-cfg.pan_max..=cfg.pan_max),
        rng.gen_range(-cfg.pan_max..=cfg.pan_max),
    );
    let n_sprites = rng.gen_range(cfg.sprites.0..=cfg.sprites.1);
    let unit = h.min(w) as f64;
    let sprites: Vec<Sprite> = (0..n_sprites)
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                SpriteShape::Rect {
                    half_w: rng.gen_range(0.06..0.2) * unit,
                    half_h: rng.gen_range(0.06..0.2) * unit,
                }
            } else {
                SpriteShape::Ellipse {
                    radius_x: rng.gen_range(0.06..0.2) * unit,
                    radius_y: rng.gen_range(0.06..0.2) * unit,
                }
            };
            let speed = cfg.sprite_speed_max;
            Sprite {
                shape,
                start: (rng.gen_range(0..w as i64), rng.gen_range(0..h as i64)),
                velocity: (rng.gen_range(-speed..=speed), rng.gen_range(-speed..=speed)),
                color: random_color(&mut rng, 0.05, 0.95),
                stripe_period: rng.gen_range(3.0..10.0),
                stripe_angle: rng.gen_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();
    let schedule = caption_schedule(&mut rng, cfg);

    let render = |t: usize| -> Image {
        let centers: Vec<(f64, f64)> = sprites.iter().map(|s| s.center(t, h, w)).collect();
        let mut frame = Image::new(3, h, w);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64, y as f64);
                let mut rgb = None;
                for (s, &c) in sprites.iter().zip(&centers).rev() {
                    if s.shape.covers(c, px, py) {
                        rgb = Some(s.shade(px - c.0, py - c.1));
                        break;
                    }
                }
                let rgb = rgb.unwrap_or_else(|| {
                    background.shade(x as i64 - pan.0 * t as i64, y as i64 - pan.1 * t as i64, h, w)
                });
                for (c, v) in rgb.iter().enumerate() {
                    frame.set(c, y, x, v.clamp(0.0, 1.0));
                }
            }
        }
        frame.quantized()
    };

    let mut clean = Vec::with_capacity(cfg.length);
    let mut corrupted = Vec::with_capacity(cfg.length);
    let mut overlay_alpha = Vec::with_capacity(cfg.length);
    for t in 0..cfg.length {
        let frame = render(t);
        let (bad, alpha) = match schedule.iter().find(|s| s.start <= t && t < s.end) {
            Some(seg) => {
                let (bad, alpha) = composite_caption(&frame, &seg.caption)?;
                (bad.quantized(), alpha.quantized())
            }
            None => (frame.clone(), Image::new(1, h, w)),
        };
        clean.push(frame);
        corrupted.push(bad);
        overlay_alpha.push(alpha);
    }

    let mut flows = Vec::with_capacity(cfg.length.saturating_sub(1));
    for t in 1..cfg.length {
        let motion = SceneMotion {
            height: h,
            width: w,
            global: (pan.0 as f64, pan.1 as f64),
            sprites: sprites
                .iter()
                .map(|s| {
                    let p = s.center(t - 1, h, w);
                    let n = s.center(t, h, w);
                    SpriteMotion {
                        shape: s.shape.clone(),
                        center_prev: p,
                        velocity: (n.0 - p.0, n.1 - p.1),
                    }
                })
                .collect(),
        };
        let (forward, backward) = flowwarp::synthetic_flow(&motion);
        let mask = flowwarp::occlusion_mask(&forward, &backward, flowwarp::DEFAULT_OCCLUSION_TOL)?;
        flows.push(StepFlow {
            forward,
            backward,
            mask,
        });
    }

    Ok(ClipPair {
        clean,
        corrupted,
        overlay_alpha,
        flows,
        seed,
        caption_schedule: schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig::with_size(32, 48, 12)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_clip(5, &small()).unwrap();
        let b = generate_clip(5, &small()).unwrap();
        assert_eq!(a, b);
        let c = generate_clip(6, &small()).unwrap();
        assert_ne!(a.clean, c.clean);
    }

    #[test]
    fn corrupted_equals_clean_outside_overlay() {
        let clip = generate_clip(11, &small()).unwrap();
        for t in 0..clip.len() {
            let a = &clip.overlay_alpha[t];
            for y in 0..32 {
                for x in 0..48 {
                    if a.get(0, y, x) == 0.0 {
                        for c in 0..3 {
                            assert_eq!(clip.corrupted[t].get(c, y, x), clip.clean[t].get(c, y, x));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn opaque_caption_changes_exactly_its_support() {
        let clean = Image::filled(3, 20, 40, 0.2);
        let spec = CaptionSpec {
            text: "HI 7".into(),
            font_scale: 1.0,
            position: (3, 4),
            fill_color: [1.0, 1.0, 1.0],
            alpha: 1.0,
            shadow: Shadow::Solid,
            shadow_alpha: 1.0,
        };
        let (bad, alpha) = composite_caption(&clean, &spec).unwrap();
        for y in 0..20 {
            for x in 0..40 {
                let changed = (0..3).any(|c| bad.get(c, y, x) != clean.get(c, y, x));
                assert_eq!(changed, alpha.get(0, y, x) > 0.0, "({y},{x})");
            }
        }
        assert!(alpha.data().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn half_transparent_white_over_dark_gray() {
        let clean = Image::filled(3, 12, 12, 0.2);
        let spec = CaptionSpec {
            text: "I".into(),
            font_scale: 1.0,
            position: (2, 2),
            fill_color: [1.0, 1.0, 1.0],
            alpha: 0.5,
            shadow: Shadow::None,
            shadow_alpha: 0.0,
        };
        let (bad, alpha) = composite_caption(&clean, &spec).unwrap();
        let bad = bad.quantized();
        // top bar of the I glyph starts at column 1 of the cell
        assert_eq!(alpha.get(0, 2, 3), 0.5);
        for c in 0..3 {
            assert_eq!(bad.get(c, 2, 3), 0.6);
        }
    }

    #[test]
    fn oversized_captions_are_rejected() {
        let mut cfg = small();
        cfg.font_scale = (8.0, 8.0);
        assert!(matches!(generate_clip(1, &cfg), Err(Error::CaptionTooLarge(_))));
        let spec = CaptionSpec {
            text: "WIDE TEXT".into(),
            font_scale: 2.0,
            position: (0, 0),
            fill_color: [1.0; 3],
            alpha: 1.0,
            shadow: Shadow::None,
            shadow_alpha: 0.0,
        };
        assert!(composite_caption(&Image::new(3, 20, 20), &spec).is_err());
    }

    #[test]
    fn soft_shadow_must_be_translucent() {
        let spec = CaptionSpec {
            text: "A".into(),
            font_scale: 1.0,
            position: (0, 0),
            fill_color: [1.0; 3],
            alpha: 1.0,
            shadow: Shadow::Soft,
            shadow_alpha: 1.0,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn synthetic_flows_align_clean_frames() {
        let clip = generate_clip(3, &GenConfig::with_size(64, 64, 16)).unwrap();
        for t in 1..clip.len() {
            let step = clip.step(t).unwrap();
            let warped = flowwarp::warp(&clip.clean[t - 1], &step.backward).unwrap();
            let (v, _) = crate::losses::masked_l1_grad(&clip.clean[t], &warped, &step.mask).unwrap();
            assert!(v < 0.02, "t={t}: {v}");
        }
    }

    #[test]
    fn captions_follow_the_schedule() {
        let clip = generate_clip(21, &GenConfig::with_size(64, 64, 48)).unwrap();
        for t in 0..clip.len() {
            let shown = clip.caption_schedule.iter().any(|s| s.start <= t && t < s.end);
            let any_alpha = clip.overlay_alpha[t].data().iter().any(|&a| a > 0.0);
            assert_eq!(shown, any_alpha, "t={t}");
        }
    }
}
