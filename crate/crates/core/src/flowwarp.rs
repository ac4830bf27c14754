//! Dense flow fields, backward bilinear warping, forward/backward consistency
//! masks and flow sources (exact flows from the synthetic scene description
//! and a coarse block-matching estimator for external footage).
//!
//! A [`FlowField`] stored for frame `t` holds, per pixel of `t`, the
//! displacement to the matching sample location in frame `t - 1`, so
//! `warp(frame[t-1], flow)` lines the previous frame up with frame `t`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const FLOW_MAGIC: &[u8; 4] = b"BVFL";

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    /// `[H, W, 2]`, `(dx, dy)` per pixel.
    vectors: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        let mut vectors = Vec::with_capacity(height * width * 2);
        for _ in 0..height * width {
            vectors.push(dx);
            vectors.push(dy);
        }
        FlowField { height, width, vectors }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let mut vectors = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                vectors.push(dx);
                vectors.push(dy);
            }
        }
        FlowField { height, width, vectors }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = 2 * (y * self.width + x);
        (self.vectors[i], self.vectors[i + 1])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, dx: f64, dy: f64) {
        let i = 2 * (y * self.width + x);
        self.vectors[i] = dx;
        self.vectors[i + 1] = dy;
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    /// Finite values with `|dx| < W` and `|dy| < H`.
    pub fn validate(&self) -> Result<()> {
        for pair in self.vectors.chunks(2) {
            let (dx, dy) = (pair[0], pair[1]);
            if !dx.is_finite() || !dy.is_finite() || dx.abs() >= self.width as f64 || dy.abs() >= self.height as f64 {
                return Err(Error::Shape(format!(
                    "flow vector ({dx}, {dy}) outside a {}x{} frame",
                    self.height, self.width
                )));
            }
        }
        Ok(())
    }

    /// Mirror left-right. Horizontal displacements change sign.
    pub fn flip_horizontal(&self) -> FlowField {
        FlowField::from_fn(self.height, self.width, |y, x| {
            let (dx, dy) = self.get(y, self.width - 1 - x);
            (-dx, dy)
        })
    }

    /// Bilinearly interpolated vector at a (clamped) sub-pixel position.
    pub fn sample(&self, sy: f64, sx: f64) -> (f64, f64) {
        let (y0, y1, fy) = bilinear_coords(sy, self.height);
        let (x0, x1, fx) = bilinear_coords(sx, self.width);
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let v = |y: usize, x: usize| self.vectors[2 * (y * self.width + x) + k];
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        (out[0], out[1])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.vectors.len() * 4);
        out.extend_from_slice(FLOW_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FlowField> {
        let bad = |reason: &str| Error::Shape(format!("flow file: {reason}"));
        if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
            return Err(bad("missing BVFL header"));
        }
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != height * width * 2 * 4 {
            return Err(bad("payload length does not match header"));
        }
        let vectors = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(FlowField { height, width, vectors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<FlowField> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FlowField::from_bytes(&bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    mask: Vec<u8>,
}

impl OcclusionMask {
    pub fn ones(height: usize, width: usize) -> Self {
        OcclusionMask {
            height,
            width,
            mask: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        OcclusionMask {
            height,
            width,
            mask: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                mask.push(u8::from(f(y, x)));
            }
        }
        OcclusionMask { height, width, mask }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x] != 0
    }

    pub fn values(&self) -> &[u8] {
        &self.mask
    }

    pub fn count_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    pub fn flip_horizontal(&self) -> OcclusionMask {
        OcclusionMask::from_fn(self.height, self.width, |y, x| self.is_valid(y, self.width - 1 - x))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> OcclusionMask {
        OcclusionMask::from_fn(height, width, |y, x| self.is_valid(top + y, left + x))
    }

    pub fn to_image(&self) -> Image {
        Image::from_fn(
            1,
            self.height,
            self.width,
            |_, y, x| {
                if self.is_valid(y, x) {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }

    /// 8-bit single-channel PNG, 0/255.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        self.to_image().write_png(path)
    }

    pub fn read_png(path: &Path) -> Result<OcclusionMask> {
        let img = Image::read_png(path)?;
        Ok(OcclusionMask::from_fn(img.height(), img.width(), |y, x| {
            img.get(0, y, x) >= 0.5
        }))
    }
}

#[inline]
fn bilinear_coords(s: f64, n: usize) -> (usize, usize, f64) {
    let s = s.clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f64)
}

fn check_dims(image: &Image, flow: &FlowField) -> Result<()> {
    if image.height() != flow.height || image.width() != flow.width {
        return Err(Error::Shape(format!(
            "image {}x{} vs flow {}x{}",
            image.height(),
            image.width(),
            flow.height,
            flow.width
        )));
    }
    Ok(())
}

/// Backward warp: `out[y, x] = image[y + dy, x + dx]`, bilinear, with sample
/// positions clamped to the border.
pub fn warp(image: &Image, flow: &FlowField) -> Result<Image> {
    check_dims(image, flow)?;
    let (c, h, w) = image.dims();
    let mut out = Image::new(c, h, w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.get(y, x);
            let (y0, y1, fy) = bilinear_coords(y as f64 + dy, h);
            let (x0, x1, fx) = bilinear_coords(x as f64 + dx, w);
            for ch in 0..c {
                let top = image.get(ch, y0, x0) * (1.0 - fx) + image.get(ch, y0, x1) * fx;
                let bottom = image.get(ch, y1, x0) * (1.0 - fx) + image.get(ch, y1, x1) * fx;
                out.set(ch, y, x, top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`warp`] with respect to the image: scatters `grad_out` back
/// through the bilinear weights.
pub fn warp_backward(grad_out: &Image, flow: &FlowField) -> Result<Image> {
    check_dims(grad_out, flow)?;
    let (c, h, w) = grad_out.dims();
    let mut grad = Image::new(c, h, w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.get(y, x);
            let (y0, y1, fy) = bilinear_coords(y as f64 + dy, h);
            let (x0, x1, fx) = bilinear_coords(x as f64 + dx, w);
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            for ch in 0..c {
                let g = grad_out.get(ch, y, x);
                for &(ty, tx, wt) in &taps {
                    let v = grad.get(ch, ty, tx) + g * wt;
                    grad.set(ch, ty, tx, v);
                }
            }
        }
    }
    Ok(grad)
}

/// Forward/backward consistency check on the grid of frame `t`.
///
/// `backward_flow` maps frame `t` to `t - 1`, `forward_flow` maps frame
/// `t - 1` to `t`. A pixel is valid when its backward sample lands inside
/// frame `t - 1` and the round trip returns within `tol` pixels.
pub fn occlusion_mask(forward_flow: &FlowField, backward_flow: &FlowField, tol: f64) -> Result<OcclusionMask> {
    if forward_flow.height != backward_flow.height || forward_flow.width != backward_flow.width {
        return Err(Error::Shape(format!(
            "forward flow {}x{} vs backward flow {}x{}",
            forward_flow.height, forward_flow.width, backward_flow.height, backward_flow.width
        )));
    }
    let (h, w) = (backward_flow.height, backward_flow.width);
    Ok(OcclusionMask::from_fn(h, w, |y, x| {
        let (bx, by) = backward_flow.get(y, x);
        let sx = x as f64 + bx;
        let sy = y as f64 + by;
        if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
            return false;
        }
        let (fx, fy) = forward_flow.sample(sy, sx);
        ((bx + fx).powi(2) + (by + fy).powi(2)).sqrt() < tol
    }))
}

/// Default round-trip tolerance in pixels.
pub const DEFAULT_OCCLUSION_TOL: f64 = 1.0;

/// Rigid shape used by the scene generator.
#[derive(Clone, Debug, PartialEq)]
pub enum SpriteShape {
    Rect { half_w: f64, half_h: f64 },
    Ellipse { radius_x: f64, radius_y: f64 },
}

impl SpriteShape {
    /// Whether pixel centre `(x, y)` lies inside the shape centred at `center`.
    pub fn covers(&self, center: (f64, f64), x: f64, y: f64) -> bool {
        let (ux, uy) = (x - center.0, y - center.1);
        match *self {
            SpriteShape::Rect { half_w, half_h } => ux.abs() <= half_w && uy.abs() <= half_h,
            SpriteShape::Ellipse { radius_x, radius_y } => (ux / radius_x).powi(2) + (uy / radius_y).powi(2) <= 1.0,
        }
    }
}

/// One sprite's motion between frame `t - 1` and frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpriteMotion {
    pub shape: SpriteShape,
    /// Centre in frame `t - 1`, pixels.
    pub center_prev: (f64, f64),
    /// Displacement `(dx, dy)` from `t - 1` to `t`.
    pub velocity: (f64, f64),
}

impl SpriteMotion {
    pub fn center_next(&self) -> (f64, f64) {
        (
            self.center_prev.0 + self.velocity.0,
            self.center_prev.1 + self.velocity.1,
        )
    }
}

/// Parametric motion of a generated scene between two consecutive frames:
/// a global translation of the background plus independently translating
/// sprites, later sprites drawn on top.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMotion {
    pub height: usize,
    pub width: usize,
    pub global: (f64, f64),
    pub sprites: Vec<SpriteMotion>,
}

impl SceneMotion {
    pub fn static_scene(height: usize, width: usize) -> Self {
        SceneMotion {
            height,
            width,
            global: (0.0, 0.0),
            sprites: Vec::new(),
        }
    }

    /// Velocity of the topmost layer covering `(x, y)`, at `t - 1` when
    /// `previous` is set, otherwise at `t`.
    fn layer_velocity(&self, x: usize, y: usize, previous: bool) -> (f64, f64) {
        let (px, py) = (x as f64, y as f64);
        for s in self.sprites.iter().rev() {
            let c = if previous { s.center_prev } else { s.center_next() };
            if s.shape.covers(c, px, py) {
                return s.velocity;
            }
        }
        self.global
    }
}

/// Exact `(forward, backward)` flows for a parametric scene step.
///
/// The forward flow lives on frame `t - 1` and holds each layer's velocity;
/// the backward flow lives on frame `t` and holds the negated velocity of the
/// layer visible there.
pub fn synthetic_flow(motion: &SceneMotion) -> (FlowField, FlowField) {
    let (h, w) = (motion.height, motion.width);
    let forward = FlowField::from_fn(h, w, |y, x| motion.layer_velocity(x, y, true));
    let backward = FlowField::from_fn(h, w, |y, x| {
        let (vx, vy) = motion.layer_velocity(x, y, false);
        (-vx, -vy)
    });
    (forward, backward)
}

const BLOCK: usize = 8;
const SEARCH: i64 = 4;
const SCALES: usize = 3;

fn luminance(image: &Image) -> Vec<f64> {
    let (c, h, w) = image.dims();
    if c == 3 {
        (0..h * w)
            .map(|i| 0.299 * image.data()[i] + 0.587 * image.data()[h * w + i] + 0.114 * image.data()[2 * h * w + i])
            .collect()
    } else {
        (0..h * w)
            .map(|i| (0..c).map(|ch| image.data()[ch * h * w + i]).sum::<f64>() / c as f64)
            .collect()
    }
}

fn downsample(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (nh, nw) = (h / 2, w / 2);
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        for x in 0..nw {
            out[y * nw + x] = 0.25
                * (plane[2 * y * w + 2 * x]
                    + plane[2 * y * w + 2 * x + 1]
                    + plane[(2 * y + 1) * w + 2 * x]
                    + plane[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, nh, nw)
}

/// Per-block displacement with the grid's rows and columns.
type BlockGrid = (Vec<(i64, i64)>, usize, usize);

/// Coarse dense flow such that `warp(frame_b, flow) ≈ frame_a`: multi-scale
/// 8×8 block matching with a ±4 px search per scale, ties broken toward the
/// smaller displacement, block vectors interpolated bilinearly to pixels.
pub fn estimate_flow(frame_a: &Image, frame_b: &Image) -> Result<FlowField> {
    frame_a.same_dims(frame_b)?;
    let (_, h, w) = frame_a.dims();
    if h < BLOCK || w < BLOCK {
        return Err(Error::TooSmall(format!(
            "{h}x{w} frame is smaller than one {BLOCK}x{BLOCK} block"
        )));
    }
    let mut pyramid = vec![(luminance(frame_a), luminance(frame_b), h, w)];
    while pyramid.len() < SCALES {
        let (a, b, ph, pw) = pyramid.last().unwrap();
        if ph / 2 < BLOCK || pw / 2 < BLOCK {
            break;
        }
        let (na, nh, nw) = downsample(a, *ph, *pw);
        let (nb, _, _) = downsample(b, *ph, *pw);
        pyramid.push((na, nb, nh, nw));
    }

    // block grid flow at the current scale, in that scale's pixels
    let mut prev: Option<BlockGrid> = None;
    let mut result = (Vec::new(), 0, 0);
    for (a, b, ph, pw) in pyramid.iter().rev() {
        let (ph, pw) = (*ph as i64, *pw as i64);
        let by = (ph as usize).div_ceil(BLOCK);
        let bx = (pw as usize).div_ceil(BLOCK);
        let mut grid = vec![(0i64, 0i64); by * bx];
        let sample = |img: &[f64], y: i64, x: i64| img[(y.clamp(0, ph - 1) * pw + x.clamp(0, pw - 1)) as usize];
        for j in 0..by {
            for i in 0..bx {
                let guess = match &prev {
                    Some((g, gby, gbx)) => {
                        let (gx, gy) = g[(j / 2).min(gby - 1) * gbx + (i / 2).min(gbx - 1)];
                        (2 * gx, 2 * gy)
                    }
                    None => (0, 0),
                };
                let y0 = (j * BLOCK) as i64;
                let x0 = (i * BLOCK) as i64;
                let mut best = (f64::INFINITY, i64::MAX, guess);
                for dy in -SEARCH..=SEARCH {
                    for dx in -SEARCH..=SEARCH {
                        let (fx, fy) = (guess.0 + dx, guess.1 + dy);
                        let mut sad = 0.0;
                        for yy in y0..(y0 + BLOCK as i64).min(ph) {
                            for xx in x0..(x0 + BLOCK as i64).min(pw) {
                                sad += (sample(a, yy, xx) - sample(b, yy + fy, xx + fx)).abs();
                            }
                        }
                        let mag = fx * fx + fy * fy;
                        if sad < best.0 - 1e-12 || ((sad - best.0).abs() <= 1e-12 && mag < best.1) {
                            best = (sad, mag, (fx, fy));
                        }
                    }
                }
                grid[j * bx + i] = best.2;
            }
        }
        result = (grid.clone(), by, bx);
        prev = Some((grid, by, bx));
    }

    let (grid, by, bx) = result;
    let centre = |k: usize| (k * BLOCK) as f64 + (BLOCK as f64 - 1.0) / 2.0;
    Ok(FlowField::from_fn(h, w, |y, x| {
        // bilinear between block centres
        let gy = ((y as f64 - centre(0)) / BLOCK as f64).clamp(0.0, (by - 1) as f64);
        let gx = ((x as f64 - centre(0)) / BLOCK as f64).clamp(0.0, (bx - 1) as f64);
        let (j0, i0) = (gy.floor() as usize, gx.floor() as usize);
        let (j1, i1) = ((j0 + 1).min(by - 1), (i0 + 1).min(bx - 1));
        let (fy, fx) = (gy - j0 as f64, gx - i0 as f64);
        let v = |j: usize, i: usize| grid[j * bx + i];
        let lerp = |k: usize| {
            let pick = |p: (i64, i64)| if k == 0 { p.0 as f64 } else { p.1 as f64 };
            let top = pick(v(j0, i0)) * (1.0 - fx) + pick(v(j0, i1)) * fx;
            let bottom = pick(v(j1, i0)) * (1.0 - fx) + pick(v(j1, i1)) * fx;
            top * (1.0 - fy) + bottom * fy
        };
        (lerp(0), lerp(1))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(3, h, w, |c, y, x| {
            let v = ((x as f64 * 0.7).sin() * (y as f64 * 0.45 + c as f64).cos() + 1.0) / 2.0;
            let hash = ((x * 73856093) ^ (y * 19349663)) % 17;
            (0.8 * v + 0.2 * hash as f64 / 16.0).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn zero_flow_warp_is_identity() {
        let img = textured(9, 11);
        assert_eq!(warp(&img, &FlowField::zeros(9, 11)).unwrap(), img);
    }

    #[test]
    fn integer_flow_shifts_columns_with_border_clamp() {
        let img = textured(6, 8);
        let out = warp(&img, &FlowField::constant(6, 8, 1.0, 0.0)).unwrap();
        for c in 0..3 {
            for y in 0..6 {
                for x in 0..8 {
                    assert_eq!(out.get(c, y, x), img.get(c, y, (x + 1).min(7)));
                }
            }
        }
    }

    #[test]
    fn half_pixel_flow_averages_neighbours() {
        let w = 8;
        let ramp = Image::from_fn(1, 3, w, |_, _, x| x as f64 / w as f64);
        let out = warp(&ramp, &FlowField::constant(3, w, 0.5, 0.0)).unwrap();
        for x in 0..w - 1 {
            let expected = (ramp.get(0, 0, x) + ramp.get(0, 0, x + 1)) / 2.0;
            assert!((out.get(0, 1, x) - expected).abs() < 1e-15);
        }
        // the last column samples beyond the border and clamps
        assert_eq!(out.get(0, 1, w - 1), ramp.get(0, 1, w - 1));
    }

    #[test]
    fn warp_rejects_mismatched_dims() {
        assert!(warp(&textured(4, 4), &FlowField::zeros(4, 5)).is_err());
    }

    #[test]
    fn warp_backward_is_adjoint() {
        let img = textured(7, 9);
        let flow = FlowField::from_fn(7, 9, |y, x| (0.3 * x as f64 - 1.1, 0.7 - 0.2 * y as f64));
        let g = Image::from_fn(3, 7, 9, |c, y, x| ((c + 2 * y + 3 * x) % 5) as f64 - 2.0);
        let lhs: f64 = warp(&img, &flow)
            .unwrap()
            .data()
            .iter()
            .zip(g.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = img
            .data()
            .iter()
            .zip(warp_backward(&g, &flow).unwrap().data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn occlusion_cases() {
        let (h, w) = (10, 12);
        let m = occlusion_mask(&FlowField::zeros(h, w), &FlowField::zeros(h, w), 1.0).unwrap();
        assert_eq!(m.count_valid(), h * w);

        let fwd = FlowField::constant(h, w, 5.0, 0.0);
        let bwd = FlowField::constant(h, w, -5.0, 0.0);
        let m = occlusion_mask(&fwd, &bwd, 1.0).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(m.is_valid(y, x), x >= 5, "({y},{x})");
            }
        }

        let m = occlusion_mask(&fwd, &FlowField::zeros(h, w), 1.0).unwrap();
        assert_eq!(m.count_valid(), 0);
    }

    #[test]
    fn occlusion_swap_mirrors_for_translations() {
        let (h, w) = (6, 10);
        let a = FlowField::constant(h, w, 3.0, 0.0);
        let b = FlowField::constant(h, w, -3.0, 0.0);
        let m1 = occlusion_mask(&a, &b, 1.0).unwrap();
        let m2 = occlusion_mask(&b, &a, 1.0).unwrap();
        assert_eq!(m1.count_valid(), m2.count_valid());
        assert_eq!(m1.flip_horizontal(), m2);
    }

    #[test]
    fn synthetic_flow_static_and_global() {
        let (f, b) = synthetic_flow(&SceneMotion::static_scene(5, 6));
        assert_eq!(f, FlowField::zeros(5, 6));
        assert_eq!(b, FlowField::zeros(5, 6));

        let mut motion = SceneMotion::static_scene(5, 6);
        motion.global = (3.0, -2.0);
        let (f, b) = synthetic_flow(&motion);
        assert_eq!(f, FlowField::constant(5, 6, 3.0, -2.0));
        assert_eq!(b, FlowField::constant(5, 6, -3.0, 2.0));
    }

    #[test]
    fn synthetic_sprite_flow_is_piecewise_constant() {
        let mut motion = SceneMotion::static_scene(20, 20);
        motion.sprites.push(SpriteMotion {
            shape: SpriteShape::Rect {
                half_w: 3.0,
                half_h: 2.0,
            },
            center_prev: (8.0, 10.0),
            velocity: (2.0, 0.0),
        });
        let (f, b) = synthetic_flow(&motion);
        for y in 0..20 {
            for x in 0..20 {
                let inside_next = (x as f64 - 10.0).abs() <= 3.0 && (y as f64 - 10.0).abs() <= 2.0;
                let inside_prev = (x as f64 - 8.0).abs() <= 3.0 && (y as f64 - 10.0).abs() <= 2.0;
                assert_eq!(b.get(y, x), if inside_next { (-2.0, 0.0) } else { (0.0, 0.0) });
                assert_eq!(f.get(y, x), if inside_prev { (2.0, 0.0) } else { (0.0, 0.0) });
            }
        }
    }

    #[test]
    fn estimator_recovers_a_global_shift() {
        let a = textured(48, 48);
        assert_eq!(estimate_flow(&a, &a).unwrap(), FlowField::zeros(48, 48));

        // b[x] = a[x - 4]: content moved right by 4, so warp(b, 4) == a
        let b = Image::from_fn(3, 48, 48, |c, y, x| a.get(c, y, x.saturating_sub(4)));
        let flow = estimate_flow(&a, &b).unwrap();
        let mut dxs: Vec<f64> = flow.vectors().chunks(2).map(|v| v[0]).collect();
        let mut dys: Vec<f64> = flow.vectors().chunks(2).map(|v| v[1]).collect();
        dxs.sort_by(f64::total_cmp);
        dys.sort_by(f64::total_cmp);
        assert!((dxs[dxs.len() / 2] - 4.0).abs() <= 1.0);
        assert!(dys[dys.len() / 2].abs() <= 1.0);
    }

    #[test]
    fn estimator_prefers_zero_on_flat_frames() {
        let a = Image::filled(3, 16, 24, 0.4);
        assert_eq!(estimate_flow(&a, &a).unwrap(), FlowField::zeros(16, 24));
        assert!(estimate_flow(&Image::filled(1, 4, 4, 0.0), &Image::filled(1, 4, 4, 0.0)).is_err());
    }

    #[test]
    fn flow_file_round_trip() {
        let flow = FlowField::from_fn(3, 4, |y, x| (x as f64 - 1.5, 0.25 * y as f64));
        let bytes = flow.to_bytes();
        assert_eq!(&bytes[..4], b"BVFL");
        assert_eq!(bytes.len(), 12 + 3 * 4 * 2 * 4);
        assert_eq!(FlowField::from_bytes(&bytes).unwrap(), flow);
        assert!(FlowField::from_bytes(&bytes[..20]).is_err());
    }
}
