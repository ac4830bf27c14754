//! Reconstruction and temporal-consistency losses.
//!
//! Every term is a mean over scalar elements, so the weights do not depend on
//! resolution. Each term has a `*_grad` form returning the analytic gradient
//! with respect to the prediction, which the training graph consumes directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowwarp::{self, FlowField, OcclusionMask};
use crate::image::Image;

/// Which terms contribute to the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledTerms {
    pub l1: bool,
    pub grad_l1: bool,
    pub ssim: bool,
    pub temporal: bool,
}

impl EnabledTerms {
    pub const ALL: EnabledTerms = EnabledTerms {
        l1: true,
        grad_l1: true,
        ssim: true,
        temporal: true,
    };

    pub const RECONSTRUCTION: EnabledTerms = EnabledTerms {
        l1: true,
        grad_l1: true,
        ssim: true,
        temporal: false,
    };

    pub const L1_ONLY: EnabledTerms = EnabledTerms {
        l1: true,
        grad_l1: false,
        ssim: false,
        temporal: false,
    };

    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.l1 {
            out.push("l1");
        }
        if self.grad_l1 {
            out.push("grad_l1");
        }
        if self.ssim {
            out.push("ssim");
        }
        if self.temporal {
            out.push("temporal");
        }
        out
    }

    /// Parse a comma-separated list such as `l1,grad_l1,ssim`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut t = EnabledTerms {
            l1: false,
            grad_l1: false,
            ssim: false,
            temporal: false,
        };
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "l1" => t.l1 = true,
                "grad_l1" => t.grad_l1 = true,
                "ssim" => t.ssim = true,
                "temporal" => t.temporal = true,
                other => return Err(Error::Config(format!("unknown loss term {other:?}"))),
            }
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub enabled: EnabledTerms,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_t: 2.0,
            ssim_window: 5,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            enabled: EnabledTerms::ALL,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r >= 0.0 && self.lambda_t >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "ssim window must be odd and at least 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::Config("ssim constants must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub grad_l1: f64,
    pub ssim_term: f64,
    pub temporal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add_scaled(&mut self, other: &LossBreakdown, scale: f64) {
        self.l1 += scale * other.l1;
        self.grad_l1 += scale * other.grad_l1;
        self.ssim_term += scale * other.ssim_term;
        self.temporal += scale * other.temporal;
        self.total += scale * other.total;
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn l1_loss(pred: &Image, target: &Image) -> Result<f64> {
    pred.same_dims(target)?;
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

pub fn l1_loss_grad(pred: &Image, target: &Image) -> Result<(f64, Image)> {
    let value = l1_loss(pred, target)?;
    let n = pred.data().len() as f64;
    let (c, h, w) = pred.dims();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| sign(a - b) / n)
        .collect();
    Ok((value, Image::from_vec(c, h, w, grad)?))
}

fn check_grad_size(pred: &Image) -> Result<()> {
    if pred.height() < 2 || pred.width() < 2 {
        return Err(Error::TooSmall(format!(
            "gradient loss needs at least 2x2, got {}x{}",
            pred.height(),
            pred.width()
        )));
    }
    Ok(())
}

/// Mean |forward difference| of `pred - target` along width plus the same
/// along height. Boundary column and row have no forward neighbour and are
/// excluded.
pub fn gradient_l1_loss(pred: &Image, target: &Image) -> Result<f64> {
    Ok(gradient_l1_loss_grad(pred, target)?.0)
}

pub fn gradient_l1_loss_grad(pred: &Image, target: &Image) -> Result<(f64, Image)> {
    pred.same_dims(target)?;
    check_grad_size(pred)?;
    let (c, h, w) = pred.dims();
    let d = |ch: usize, y: usize, x: usize| pred.get(ch, y, x) - target.get(ch, y, x);
    let nw = (c * h * (w - 1)) as f64;
    let nh = (c * (h - 1) * w) as f64;
    let mut horizontal = 0.0;
    let mut vertical = 0.0;
    let mut grad = Image::new(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    let g = d(ch, y, x + 1) - d(ch, y, x);
                    horizontal += g.abs();
                    let s = sign(g) / nw;
                    grad.set(ch, y, x + 1, grad.get(ch, y, x + 1) + s);
                    grad.set(ch, y, x, grad.get(ch, y, x) - s);
                }
                if y + 1 < h {
                    let g = d(ch, y + 1, x) - d(ch, y, x);
                    vertical += g.abs();
                    let s = sign(g) / nh;
                    grad.set(ch, y + 1, x, grad.get(ch, y + 1, x) + s);
                    grad.set(ch, y, x, grad.get(ch, y, x) - s);
                }
            }
        }
    }
    Ok((horizontal / nw + vertical / nh, grad))
}

/// Sums over every `k×k` window fully inside an `h×w` plane.
fn box_sum_valid(plane: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        let mut acc: f64 = line[..k].iter().sum();
        rows[y * ow] = acc;
        for x in 1..ow {
            acc += line[x + k - 1] - line[x - 1];
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for x in 0..ow {
        let mut acc: f64 = (0..k).map(|y| rows[y * ow + x]).sum();
        out[x] = acc;
        for y in 1..oh {
            acc += rows[(y + k - 1) * ow + x] - rows[(y - 1) * ow + x];
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`box_sum_valid`]: each pixel receives the sum of the window
/// values of every window that contains it.
fn box_sum_adjoint(map: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut cols = vec![0.0; h * ow];
    for x in 0..ow {
        for y in 0..h {
            let lo = (y + 1).saturating_sub(k);
            let hi = y.min(oh - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += map[j * ow + x];
            }
            cols[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = (x + 1).saturating_sub(k);
            let hi = x.min(ow - 1);
            let mut acc = 0.0;
            for i in lo..=hi {
                acc += cols[y * ow + i];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn check_ssim_inputs(pred: &Image, target: &Image, weights: &LossWeights) -> Result<()> {
    pred.same_dims(target)?;
    let k = weights.ssim_window;
    if pred.height() < k || pred.width() < k {
        return Err(Error::TooSmall(format!(
            "{}x{} image is smaller than the {k}x{k} SSIM window",
            pred.height(),
            pred.width()
        )));
    }
    Ok(())
}

/// Mean SSIM over all fully-contained `ssim_window` windows and channels,
/// with uniform window weights and population statistics.
pub fn ssim(pred: &Image, target: &Image, weights: &LossWeights) -> Result<f64> {
    Ok(ssim_with_grad(pred, target, weights, false)?.0)
}

fn ssim_with_grad(
    pred: &Image,
    target: &Image,
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(f64, Option<Image>)> {
    check_ssim_inputs(pred, target, weights)?;
    let (c, h, w) = pred.dims();
    let k = weights.ssim_window;
    let (c1, c2) = (weights.ssim_c1, weights.ssim_c2);
    let n = (k * k) as f64;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let count = (c * oh * ow) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(c, h, w));
    for ch in 0..c {
        let x = pred.plane(ch);
        let y = target.plane(ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let sx = box_sum_valid(x, h, w, k);
        let sy = box_sum_valid(y, h, w, k);
        let sxx = box_sum_valid(&xx, h, w, k);
        let syy = box_sum_valid(&yy, h, w, k);
        let sxy = box_sum_valid(&xy, h, w, k);
        let m = oh * ow;
        let (mut alpha, mut beta, mut gamma) = if want_grad {
            (vec![0.0; m], vec![0.0; m], vec![0.0; m])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        for i in 0..m {
            let mx = sx[i] / n;
            let my = sy[i] / n;
            let vx = sxx[i] / n - mx * mx;
            let vy = syy[i] / n - my * my;
            let cxy = sxy[i] / n - mx * my;
            let a1 = 2.0 * mx * my + c1;
            let a2 = 2.0 * cxy + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = vx + vy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let d_mx = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * s / b1;
                let d_vx = -s / b2;
                let d_cxy = 2.0 * a1 / (b1 * b2);
                alpha[i] = d_mx - 2.0 * mx * d_vx - my * d_cxy;
                beta[i] = 2.0 * d_vx;
                gamma[i] = d_cxy;
            }
        }
        if let Some(g) = grad.as_mut() {
            let ga = box_sum_adjoint(&alpha, h, w, k);
            let gb = box_sum_adjoint(&beta, h, w, k);
            let gc = box_sum_adjoint(&gamma, h, w, k);
            let scale = 1.0 / (n * count);
            let dst = &mut g.data_mut()[ch * h * w..(ch + 1) * h * w];
            for p in 0..h * w {
                dst[p] = scale * (ga[p] + x[p] * gb[p] + y[p] * gc[p]);
            }
        }
    }
    Ok((total / count, grad))
}

/// `1 - ssim`, in `[0, 2]`.
pub fn ssim_loss(pred: &Image, target: &Image, weights: &LossWeights) -> Result<f64> {
    Ok(1.0 - ssim(pred, target, weights)?)
}

pub fn ssim_loss_grad(pred: &Image, target: &Image, weights: &LossWeights) -> Result<(f64, Image)> {
    let (s, g) = ssim_with_grad(pred, target, weights, true)?;
    let mut g = g.expect("gradient requested");
    g.data_mut().iter_mut().for_each(|v| *v = -*v);
    Ok((1.0 - s, g))
}

/// Mean over mask-valid pixels (and all channels) of `|pred - reference|`.
/// An empty mask gives 0.
pub fn masked_l1_grad(pred: &Image, reference: &Image, mask: &OcclusionMask) -> Result<(f64, Image)> {
    pred.same_dims(reference)?;
    let (c, h, w) = pred.dims();
    if mask.height() != h || mask.width() != w {
        return Err(Error::Shape(format!(
            "mask {}x{} vs image {}x{}",
            mask.height(),
            mask.width(),
            h,
            w
        )));
    }
    let valid = mask.count_valid();
    let mut grad = Image::new(c, h, w);
    if valid == 0 {
        return Ok((0.0, grad));
    }
    let n = (valid * c) as f64;
    let mut acc = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if mask.is_valid(y, x) {
                    let d = pred.get(ch, y, x) - reference.get(ch, y, x);
                    acc += d.abs();
                    grad.set(ch, y, x, sign(d) / n);
                }
            }
        }
    }
    Ok((acc / n, grad))
}

pub fn temporal_loss(pred_t: &Image, prev: &Image, flow: &FlowField, mask: &OcclusionMask) -> Result<f64> {
    pred_t.same_dims(prev)?;
    let warped = flowwarp::warp(prev, flow)?;
    Ok(masked_l1_grad(pred_t, &warped, mask)?.0)
}

/// Temporal loss with gradients for both the current prediction and the
/// previous frame (through the warp).
pub fn temporal_loss_grad(
    pred_t: &Image,
    prev: &Image,
    flow: &FlowField,
    mask: &OcclusionMask,
) -> Result<(f64, Image, Image)> {
    pred_t.same_dims(prev)?;
    let warped = flowwarp::warp(prev, flow)?;
    let (value, grad_pred) = masked_l1_grad(pred_t, &warped, mask)?;
    let neg = Image::from_vec(
        grad_pred.channels(),
        grad_pred.height(),
        grad_pred.width(),
        grad_pred.data().iter().map(|v| -v).collect(),
    )?;
    let grad_prev = flowwarp::warp_backward(&neg, flow)?;
    Ok((value, grad_pred, grad_prev))
}

/// Previous frame already aligned to the current one, plus its validity mask.
#[derive(Clone, Debug)]
pub struct TemporalTarget {
    pub warped_prev: Image,
    pub mask: OcclusionMask,
}

impl TemporalTarget {
    pub fn new(prev: &Image, flow: &FlowField, mask: OcclusionMask) -> Result<Self> {
        Ok(TemporalTarget {
            warped_prev: flowwarp::warp(prev, flow)?,
            mask,
        })
    }
}

/// Weighted objective over the enabled terms, with its gradient with respect
/// to `pred`.
pub fn total_loss_grad(
    pred: &Image,
    target: &Image,
    temporal: Option<&TemporalTarget>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Image)> {
    pred.same_dims(target)?;
    let en = weights.enabled;
    let (c, h, w) = pred.dims();
    let mut grad = Image::new(c, h, w);
    let mut out = LossBreakdown::default();
    let mut accumulate = |g: &Image, scale: f64| {
        for (a, b) in grad.data_mut().iter_mut().zip(g.data()) {
            *a += scale * b;
        }
    };
    if en.l1 {
        let (v, g) = l1_loss_grad(pred, target)?;
        out.l1 = v;
        accumulate(&g, weights.lambda_r);
    }
    if en.grad_l1 {
        let (v, g) = gradient_l1_loss_grad(pred, target)?;
        out.grad_l1 = v;
        accumulate(&g, weights.lambda_r);
    }
    if en.ssim {
        let (v, g) = ssim_loss_grad(pred, target, weights)?;
        out.ssim_term = v;
        accumulate(&g, weights.lambda_r);
    }
    if en.temporal {
        let t = temporal
            .ok_or_else(|| Error::Config("temporal loss enabled but no flow/mask target was supplied".into()))?;
        let (v, g) = masked_l1_grad(pred, &t.warped_prev, &t.mask)?;
        out.temporal = v;
        accumulate(&g, weights.lambda_t);
    }
    out.total = weights.lambda_r * (out.l1 + out.grad_l1 + out.ssim_term) + weights.lambda_t * out.temporal;
    Ok((out, grad))
}

pub fn total_loss(
    pred: &Image,
    target: &Image,
    temporal: Option<&TemporalTarget>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(total_loss_grad(pred, target, temporal, weights)?.0)
}
