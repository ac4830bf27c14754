//! Oracles shared by the test targets. Each check returns a description of
//! what it verified, or the first discrepancy.
#![allow(dead_code)]

use bvd::autograd::Graph;
use bvd::flowwarp::{warp, FlowField, OcclusionMask};
use bvd::losses::{self, LossWeights};
use bvd::metrics;
use bvd::model::{build_model, BatchTensors, HasParameters, Model, ModelConfig, WindowBatch};
use bvd::tensor::Tensor;
use bvd::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-3;
pub const SSIM_TOL: f64 = 1e-6;

pub fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Image {
    Image::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Direct per-window SSIM: explicit loops, two-pass statistics.
pub fn ssim_oracle(a: &Image, b: &Image, k: usize, c1: f64, c2: f64) -> f64 {
    let (c, h, w) = a.dims();
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for ch in 0..c {
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let pix =
                    |img: &Image| -> Vec<f64> { (0..k * k).map(|i| img.get(ch, y0 + i / k, x0 + i % k)).collect() };
                let (pa, pb) = (pix(a), pix(b));
                let ma = pa.iter().sum::<f64>() / n;
                let mb = pb.iter().sum::<f64>() / n;
                let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                let cov = pa.iter().zip(&pb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                windows += 1;
            }
        }
    }
    total / windows as f64
}

/// Largest SSIM deviation from the oracle over 50 random 16×16 pairs, half of
/// them correlated.
pub fn check_ssim_oracle() -> Check {
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let a = random_image(&mut rng, 3, 16, 16, 0.0, 1.0);
        let b = if i % 2 == 0 {
            random_image(&mut rng, 3, 16, 16, 0.0, 1.0)
        } else {
            let noise = random_image(&mut rng, 3, 16, 16, 0.0, 0.1);
            Image::from_vec(
                3,
                16,
                16,
                a.data()
                    .iter()
                    .zip(noise.data())
                    .map(|(v, n)| (v + n).min(1.0))
                    .collect(),
            )
            .unwrap()
        };
        let got = losses::ssim(&a, &b, &weights).map_err(|e| e.to_string())?;
        let want = ssim_oracle(&a, &b, weights.ssim_window, weights.ssim_c1, weights.ssim_c2);
        worst = worst.max((got - want).abs());
    }
    if worst < SSIM_TOL {
        Ok(format!("ssim max deviation {worst:.2e} over 50 pairs"))
    } else {
        Err(format!("ssim deviates by {worst:.2e} (tolerance {SSIM_TOL:.0e})"))
    }
}

fn expect_eq(what: &str, got: f64, want: f64) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: got {got:?}, want {want:?}"))
    }
}

/// Hand-computed cases that must hold bit for bit.
pub fn check_hand_cases() -> Check {
    let w = LossWeights::default();
    let e = |r: bvd::Result<f64>| r.map_err(|e| e.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_image(&mut rng, 3, 12, 12, 0.0, 1.0);
    expect_eq(
        "dssim(a,a)",
        e(metrics::dssim(std::slice::from_ref(&a), std::slice::from_ref(&a), &w))?,
        0.0,
    )?;
    expect_eq("psnr(0.01)", metrics::psnr_from_mse(0.01), 20.0)?;
    expect_eq("psnr(0.001)", metrics::psnr_from_mse(0.001), 30.0)?;
    expect_eq("psnr(0)", metrics::psnr_from_mse(0.0), metrics::PSNR_CAP_DB)?;

    let zero = Image::new(3, 8, 8);
    let half = Image::filled(3, 8, 8, 0.5);
    expect_eq(
        "mse(0, 0.5)",
        e(metrics::mse(std::slice::from_ref(&zero), std::slice::from_ref(&half)))?,
        0.25,
    )?;
    let checker = |inv: bool| Image::from_fn(3, 4, 4, move |_, y, x| if ((x + y) % 2 == 0) ^ inv { 1.0 } else { 0.0 });
    expect_eq(
        "mse(checker, inverse)",
        e(metrics::mse(&[checker(false)], &[checker(true)]))?,
        1.0,
    )?;

    let p = Image::from_vec(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let t = Image::from_vec(1, 2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    expect_eq("l1 2x2", e(losses::l1_loss(&p, &t))?, 0.5)?;
    expect_eq("l1(p,p)", e(losses::l1_loss(&p, &p))?, 0.0)?;
    // horizontal ramp against a flat target: every x-difference is 0.25,
    // every y-difference 0
    let ramp = Image::from_fn(1, 4, 4, |_, _, x| 0.25 * x as f64);
    let flat = Image::filled(1, 4, 4, 0.5);
    expect_eq("grad_l1 ramp", e(losses::gradient_l1_loss(&ramp, &flat))?, 0.25)?;
    expect_eq("grad_l1 flat", e(losses::gradient_l1_loss(&flat, &flat))?, 0.0)?;
    Ok("dssim, psnr, mse, l1 and grad_l1 hand cases exact".into())
}

/// Central differences of `f` at every element of `x`.
pub fn numeric_grad(x: &Image, step: f64, f: impl Fn(&Image) -> f64) -> Vec<f64> {
    (0..x.data().len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += step;
            let mut m = x.clone();
            m.data_mut()[i] -= step;
            (f(&p) - f(&m)) / (2.0 * step)
        })
        .collect()
}

/// Element-wise relative error; the floor at 1% of the largest component
/// keeps near-zero entries from dominating.
pub fn compare(analytic: &[f64], numeric: &[f64], what: &str) -> Check {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs() / n.abs().max(a.abs()).max(1e-2 * scale).max(1e-12);
        if err >= FD_REL_TOL {
            return Err(format!("{what}[{i}]: analytic {a} numeric {n} (rel {err:.2e})"));
        }
        worst = worst.max(err);
    }
    Ok(format!("{what} rel {worst:.1e}"))
}

fn diffs(p: &Image, t: &Image) -> Vec<f64> {
    p.data().iter().zip(t.data()).map(|(a, b)| a - b).collect()
}

fn min_abs(v: &[f64]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

/// Smallest |x-difference| or |y-difference| of `d` per channel.
fn min_abs_neighbour_diff(d: &Image) -> f64 {
    let (c, h, w) = d.dims();
    let mut m = f64::INFINITY;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    m = m.min((d.get(ch, y, x + 1) - d.get(ch, y, x)).abs());
                }
                if y + 1 < h {
                    m = m.min((d.get(ch, y + 1, x) - d.get(ch, y, x)).abs());
                }
            }
        }
    }
    m
}

/// Draw pairs until `ok` holds, which the callers use to keep every kink of
/// |·| out of reach of the finite-difference step.
fn pair_where(rng: &mut ChaCha8Rng, h: usize, w: usize, ok: impl Fn(&Image, &Image) -> bool) -> (Image, Image) {
    for _ in 0..10_000 {
        let target = random_image(rng, 3, h, w, 0.05, 0.95);
        let pred = random_image(rng, 3, h, w, 0.05, 0.95);
        if ok(&pred, &target) {
            return (pred, target);
        }
    }
    panic!("no kink-free pair found");
}

pub fn check_l1_grad() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, t) = pair_where(&mut rng, 8, 8, |p, t| min_abs(&diffs(p, t)) > 4.0 * FD_STEP);
    let (_, g) = losses::l1_loss_grad(&p, &t).map_err(|e| e.to_string())?;
    compare(
        g.data(),
        &numeric_grad(&p, FD_STEP, |x| losses::l1_loss(x, &t).unwrap()),
        "l1",
    )
}

pub fn check_gradient_l1_grad() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ok =
        |p: &Image, t: &Image| min_abs_neighbour_diff(&Image::from_vec(3, 8, 8, diffs(p, t)).unwrap()) > 4.0 * FD_STEP;
    let (p, t) = pair_where(&mut rng, 8, 8, ok);
    let (_, g) = losses::gradient_l1_loss_grad(&p, &t).map_err(|e| e.to_string())?;
    compare(
        g.data(),
        &numeric_grad(&p, FD_STEP, |x| losses::gradient_l1_loss(x, &t).unwrap()),
        "grad_l1",
    )
}

pub fn check_ssim_grad() -> Check {
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for (h, w) in [(8, 8), (12, 16)] {
        let p = random_image(&mut rng, 3, h, w, 0.05, 0.95);
        let t = random_image(&mut rng, 3, h, w, 0.05, 0.95);
        let (_, g) = losses::ssim_loss_grad(&p, &t, &weights).map_err(|e| e.to_string())?;
        let n = numeric_grad(&p, FD_STEP, |x| losses::ssim_loss(x, &t, &weights).unwrap());
        out.push(compare(g.data(), &n, &format!("ssim {h}x{w}"))?);
    }
    Ok(out.join(", "))
}

/// Both arguments of the masked temporal term, with a fractional flow so the
/// bilinear weights are all exercised.
pub fn check_temporal_grad() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (8, 8);
    let flow = FlowField::from_fn(h, w, |y, x| (0.3 + 0.1 * (x % 3) as f64, -0.45 + 0.05 * (y % 4) as f64));
    let mask = OcclusionMask::from_fn(h, w, |y, x| (x + 2 * y) % 5 != 0);
    let prev = random_image(&mut rng, 3, h, w, 0.05, 0.95);
    let warped = warp(&prev, &flow).unwrap();
    // a nudge of prev moves the warped value by at most the step, so the same
    // margin protects both directions
    let (pred, _) = pair_where(&mut rng, h, w, |p, _| min_abs(&diffs(p, &warped)) > 4.0 * FD_STEP);
    let (_, gp, gq) = losses::temporal_loss_grad(&pred, &prev, &flow, &mask).map_err(|e| e.to_string())?;
    let a = compare(
        gp.data(),
        &numeric_grad(&pred, FD_STEP, |x| {
            losses::temporal_loss(x, &prev, &flow, &mask).unwrap()
        }),
        "temporal/pred",
    )?;
    let b = compare(
        gq.data(),
        &numeric_grad(&prev, FD_STEP, |x| {
            losses::temporal_loss(&pred, x, &flow, &mask).unwrap()
        }),
        "temporal/prev",
    )?;
    Ok(format!("{a}, {b}"))
}

/// Scalar probe `sum(r * residual)`.
fn probe(model: &Model, inputs: &BatchTensors, r: &Tensor) -> f64 {
    let mut g = Graph::new();
    let v = model.forward_graph(&mut g, inputs, false).unwrap();
    g.value(v.residual)
        .data()
        .iter()
        .zip(r.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Parameter gradients of a 16×16 forward pass, four random entries per
/// tensor.
///
/// With everything else fixed the residual is piecewise linear in any single
/// weight, so a nonzero second difference means the 1e-3 step crossed a
/// leaky-ReLU kink. Those samples are retried with a 1e-7 step and counted.
pub fn check_model_grad(cfg: &ModelConfig, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (16, 16);
    let mut model = build_model(cfg).map_err(|e| e.to_string())?;
    let frames = (0..cfg.window_len())
        .map(|_| random_image(&mut rng, 3, h, w, 0.05, 0.95))
        .collect();
    let prev = random_image(&mut rng, 3, h, w, 0.05, 0.95);
    let win = WindowBatch::new(frames, prev, None).unwrap();
    let inputs = BatchTensors::pack(&[&win]).unwrap();
    let r = Tensor::from_vec(
        &[1, 3, 1, h, w],
        (0..3 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let mut g = Graph::new();
    let v = model.forward_graph(&mut g, &inputs, true).unwrap();
    let value = probe(&model, &inputs, &r);
    let root = g.loss(v.residual, value, r.clone()).unwrap();
    let grads = g.backward(root).unwrap();
    let analytic: Vec<Tensor> = v
        .params
        .iter()
        .zip(model.parameters())
        .map(|(&p, t)| grads.get(p).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let names = model.parameter_names();
    let (mut coarse, mut fine) = (0, 0);
    let mut worst = 0.0f64;
    for k in 0..names.len() {
        let len = model.parameters()[k].len();
        for _ in 0..4 {
            let i = rng.gen_range(0..len);
            let orig = model.parameters()[k].data()[i];
            let mut at = |h: f64| {
                model.parameters_mut()[k].data_mut()[i] = orig + h;
                let v = probe(&model, &inputs, &r);
                model.parameters_mut()[k].data_mut()[i] = orig;
                v
            };
            let (f0, fp, fm) = (at(0.0), at(FD_STEP), at(-FD_STEP));
            let n = if (fp - 2.0 * f0 + fm).abs() <= 1e-12 * f0.abs().max(1.0) {
                coarse += 1;
                (fp - fm) / (2.0 * FD_STEP)
            } else {
                fine += 1;
                (at(1e-7) - at(-1e-7)) / 2e-7
            };
            let a = analytic[k].data()[i];
            let err = (a - n).abs() / n.abs().max(a.abs()).max(1e-6);
            if err >= FD_REL_TOL {
                return Err(format!("{}[{i}]: analytic {a} numeric {n} (rel {err:.2e})", names[k]));
            }
            worst = worst.max(err);
        }
    }
    if coarse == 0 {
        return Err("every sample crossed a kink".into());
    }
    Ok(format!(
        "{} rel {worst:.1e} ({coarse} at step 1e-3, {fine} kink crossings at 1e-7)",
        cfg.variant.as_str()
    ))
}
