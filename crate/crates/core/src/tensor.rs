//! Dense row-major `f64` tensors and the convolution kernels the network is
//! built from.
//!
//! Feature maps are 5-D, laid out `[batch, channels, time, height, width]`.
//! A 2-D convolution is a 3-D convolution whose temporal kernel, stride and
//! padding are 1, 1 and 0, so a single im2col/gemm path serves both.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `[batch, channels, time, height, width]` of a 5-D tensor.
    pub fn dims5(&self) -> [usize; 5] {
        assert_eq!(self.shape.len(), 5, "expected a 5-D tensor, got {:?}", self.shape);
        [
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
            self.shape[4],
        ]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * *b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Kernel, stride, zero padding and dilation along (time, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
}

impl ConvGeom {
    /// Spatial 2-D convolution with "same" padding for stride 1.
    pub fn spatial(kernel: usize, stride: usize, dilation: usize) -> Self {
        ConvGeom {
            kernel: [1, kernel, kernel],
            stride: [1, stride, stride],
            padding: [0, dilation * (kernel / 2), dilation * (kernel / 2)],
            dilation: [1, dilation, dilation],
        }
    }

    /// Temporal kernel `kt` applied without temporal padding, so the time
    /// extent shrinks by `kt - 1`.
    pub fn spatio_temporal(kt: usize, kernel: usize, stride: usize) -> Self {
        ConvGeom {
            kernel: [kt, kernel, kernel],
            stride: [1, stride, stride],
            padding: [0, kernel / 2, kernel / 2],
            dilation: [1, 1, 1],
        }
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let span = self.dilation[i] * (self.kernel[i] - 1) + 1;
            let padded = input[i] + 2 * self.padding[i];
            if padded < span || self.stride[i] == 0 {
                return None;
            }
            out[i] = (padded - span) / self.stride[i] + 1;
        }
        Some(out)
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }
}

/// `c (m×n) = alpha · a (m×k) · b (k×n) + beta · c`, all row-major unless the
/// strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices that lie inside the slices, which
    // the callers size from the same m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f64], channels: usize, in_dims: [usize; 3], geom: &ConvGeom, out_dims: [usize; 3], col: &mut [f64]) {
    let [id, ih, iw] = in_dims;
    let [od, oh, ow] = out_dims;
    let [kd, kh, kw] = geom.kernel;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let plane = &input[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut o = 0;
                    for zd in 0..od {
                        let z = (zd * geom.stride[0] + a * geom.dilation[0]) as isize - geom.padding[0] as isize;
                        if z < 0 || z >= id as isize {
                            dst[o..o + oh * ow].fill(0.0);
                            o += oh * ow;
                            continue;
                        }
                        let frame = &plane[z as usize * ih * iw..(z as usize + 1) * ih * iw];
                        for yd in 0..oh {
                            let y = (yd * geom.stride[1] + b * geom.dilation[1]) as isize - geom.padding[1] as isize;
                            if y < 0 || y >= ih as isize {
                                dst[o..o + ow].fill(0.0);
                                o += ow;
                                continue;
                            }
                            let line = &frame[y as usize * iw..(y as usize + 1) * iw];
                            let x0 = (e * geom.dilation[2]) as isize - geom.padding[2] as isize;
                            let sx = geom.stride[2] as isize;
                            for xd in 0..ow {
                                let x = x0 + xd as isize * sx;
                                dst[o] = if x >= 0 && x < iw as isize {
                                    line[x as usize]
                                } else {
                                    0.0
                                };
                                o += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im(
    col: &[f64],
    channels: usize,
    in_dims: [usize; 3],
    geom: &ConvGeom,
    out_dims: [usize; 3],
    grad_input: &mut [f64],
) {
    let [id, ih, iw] = in_dims;
    let [od, oh, ow] = out_dims;
    let [kd, kh, kw] = geom.kernel;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut grad_input[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut o = 0;
                    for zd in 0..od {
                        let z = (zd * geom.stride[0] + a * geom.dilation[0]) as isize - geom.padding[0] as isize;
                        if z < 0 || z >= id as isize {
                            o += oh * ow;
                            continue;
                        }
                        let z = z as usize;
                        for yd in 0..oh {
                            let y = (yd * geom.stride[1] + b * geom.dilation[1]) as isize - geom.padding[1] as isize;
                            if y < 0 || y >= ih as isize {
                                o += ow;
                                continue;
                            }
                            let base = z * ih * iw + y as usize * iw;
                            let x0 = (e * geom.dilation[2]) as isize - geom.padding[2] as isize;
                            let sx = geom.stride[2] as isize;
                            for xd in 0..ow {
                                let x = x0 + xd as isize * sx;
                                if x >= 0 && x < iw as isize {
                                    plane[base + x as usize] += src[o];
                                }
                                o += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn conv_shapes(input: &Tensor, weight: &Tensor, geom: &ConvGeom) -> Result<([usize; 3], usize)> {
    let [_, ci, d, h, w] = input.dims5();
    let ws = weight.shape();
    if ws.len() != 5 || ws[1] != ci || ws[2..] != geom.kernel[..] {
        return Err(Error::Shape(format!(
            "weight {:?} does not match input channels {} and kernel {:?}",
            ws, ci, geom.kernel
        )));
    }
    let out = geom.output_dims([d, h, w]).ok_or_else(|| {
        Error::Shape(format!(
            "input extent {:?} too small for kernel {:?}",
            [d, h, w],
            geom.kernel
        ))
    })?;
    Ok((out, ws[0]))
}

/// 3-D convolution. `input` is `[B, Ci, D, H, W]`, `weight` is
/// `[Co, Ci, kt, kh, kw]`, `bias` is `[Co]`.
pub fn conv3d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: &ConvGeom) -> Result<Tensor> {
    let [batch, ci, d, h, w] = input.dims5();
    let (out_dims, co) = conv_shapes(input, weight, geom)?;
    let p: usize = out_dims.iter().product();
    let k = ci * geom.kernel_volume();
    let in_len = ci * d * h * w;
    let mut out = Tensor::zeros(&[batch, co, out_dims[0], out_dims[1], out_dims[2]]);
    let mut col = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for b in 0..batch {
        let x = &input.data[b * in_len..(b + 1) * in_len];
        let y = &mut out.data[b * co * p..(b + 1) * co * p];
        if let Some(bias) = bias {
            for (c, chunk) in y.chunks_mut(p).enumerate() {
                chunk.fill(bias.data[c]);
            }
        }
        let cols: &[f64] = if geom.is_pointwise() {
            x
        } else {
            im2col(x, ci, [d, h, w], geom, out_dims, &mut col);
            &col
        };
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(
            co,
            k,
            p,
            1.0,
            &weight.data,
            (k as isize, 1),
            cols,
            (p as isize, 1),
            beta,
            y,
        );
    }
    Ok(out)
}

/// Gradients of [`conv3d`] with respect to input, weight and bias.
pub fn conv3d_backward(
    input: &Tensor,
    weight: &Tensor,
    geom: &ConvGeom,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let [batch, ci, d, h, w] = input.dims5();
    let (out_dims, co) = conv_shapes(input, weight, geom)?;
    let p: usize = out_dims.iter().product();
    let k = ci * geom.kernel_volume();
    let in_len = ci * d * h * w;
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[co]);
    let mut grad_in = want_input_grad.then(|| Tensor::zeros(input.shape()));
    let mut col = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    let mut dcol = if want_input_grad && !geom.is_pointwise() {
        vec![0.0; k * p]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let x = &input.data[b * in_len..(b + 1) * in_len];
        let gy = &grad_out.data[b * co * p..(b + 1) * co * p];
        for (c, chunk) in gy.chunks(p).enumerate() {
            grad_b.data[c] += chunk.iter().sum::<f64>();
        }
        let cols: &[f64] = if geom.is_pointwise() {
            x
        } else {
            im2col(x, ci, [d, h, w], geom, out_dims, &mut col);
            &col
        };
        // dW (co×k) += dY (co×p) · colsᵀ (p×k)
        gemm(
            co,
            p,
            k,
            1.0,
            gy,
            (p as isize, 1),
            cols,
            (1, p as isize),
            1.0,
            &mut grad_w.data,
        );
        if let Some(gi) = grad_in.as_mut() {
            let gx = &mut gi.data[b * in_len..(b + 1) * in_len];
            if geom.is_pointwise() {
                // dX (k×p) = Wᵀ (k×co) · dY (co×p)
                gemm(
                    k,
                    co,
                    p,
                    1.0,
                    &weight.data,
                    (1, k as isize),
                    gy,
                    (p as isize, 1),
                    0.0,
                    gx,
                );
            } else {
                gemm(
                    k,
                    co,
                    p,
                    1.0,
                    &weight.data,
                    (1, k as isize),
                    gy,
                    (p as isize, 1),
                    0.0,
                    &mut dcol,
                );
                col2im(&dcol, ci, [d, h, w], geom, out_dims, gx);
            }
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

/// Nearest-neighbour ×2 upsampling along height and width.
pub fn upsample2(input: &Tensor) -> Tensor {
    let [b, c, d, h, w] = input.dims5();
    let mut out = Tensor::zeros(&[b, c, d, 2 * h, 2 * w]);
    let planes = b * c * d;
    for p in 0..planes {
        let src = &input.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x in 0..2 * w {
                dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let [b, c, d, h2, w2] = grad_out.dims5();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros(&[b, c, d, h, w]);
    let planes = b * c * d;
    for p in 0..planes {
        let src = &grad_out.data[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut out.data[p * h * w..(p + 1) * h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                dst[(y / 2) * w + x / 2] += src[y * w2 + x];
            }
        }
    }
    out
}

/// Concatenate along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [ba, ca, da, ha, wa] = a.dims5();
    let [bb, cb, db, hb, wb] = b.dims5();
    if (ba, da, ha, wa) != (bb, db, hb, wb) {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let plane = da * ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..ba {
        data.extend_from_slice(&a.data[n * ca * plane..(n + 1) * ca * plane]);
        data.extend_from_slice(&b.data[n * cb * plane..(n + 1) * cb * plane]);
    }
    Tensor::from_vec(&[ba, ca + cb, da, ha, wa], data)
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels(grad: &Tensor, first: usize) -> (Tensor, Tensor) {
    let [b, c, d, h, w] = grad.dims5();
    let plane = d * h * w;
    let second = c - first;
    let mut ga = Vec::with_capacity(b * first * plane);
    let mut gb = Vec::with_capacity(b * second * plane);
    for n in 0..b {
        let base = n * c * plane;
        ga.extend_from_slice(&grad.data[base..base + first * plane]);
        gb.extend_from_slice(&grad.data[base + first * plane..base + c * plane]);
    }
    (
        Tensor::from_vec(&[b, first, d, h, w], ga).expect("split sizes"),
        Tensor::from_vec(&[b, second, d, h, w], gb).expect("split sizes"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as the reference.
    fn conv_naive(input: &Tensor, weight: &Tensor, bias: &Tensor, g: &ConvGeom) -> Tensor {
        let [bn, ci, d, h, w] = input.dims5();
        let co = weight.shape()[0];
        let [od, oh, ow] = g.output_dims([d, h, w]).unwrap();
        let mut out = Tensor::zeros(&[bn, co, od, oh, ow]);
        for b in 0..bn {
            for o in 0..co {
                for z in 0..od {
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut acc = bias.data()[o];
                            for c in 0..ci {
                                for a in 0..g.kernel[0] {
                                    for bb in 0..g.kernel[1] {
                                        for e in 0..g.kernel[2] {
                                            let zi =
                                                (z * g.stride[0] + a * g.dilation[0]) as isize - g.padding[0] as isize;
                                            let yi =
                                                (y * g.stride[1] + bb * g.dilation[1]) as isize - g.padding[1] as isize;
                                            let xi =
                                                (x * g.stride[2] + e * g.dilation[2]) as isize - g.padding[2] as isize;
                                            if zi < 0
                                                || yi < 0
                                                || xi < 0
                                                || zi >= d as isize
                                                || yi >= h as isize
                                                || xi >= w as isize
                                            {
                                                continue;
                                            }
                                            let iv = input.data()[(((b * ci + c) * d + zi as usize) * h + yi as usize)
                                                * w
                                                + xi as usize];
                                            let wv = weight.data()[(((o * ci + c) * g.kernel[0] + a) * g.kernel[1]
                                                + bb)
                                                * g.kernel[2]
                                                + e];
                                            acc += iv * wv;
                                        }
                                    }
                                }
                            }
                            out.data_mut()[(((b * co + o) * od + z) * oh + y) * ow + x] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        let mut s = seed;
        let data = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_matches_naive_for_assorted_geometries() {
        let geoms = [
            ConvGeom::spatial(3, 1, 1),
            ConvGeom::spatial(3, 2, 1),
            ConvGeom::spatial(3, 1, 2),
            ConvGeom::spatio_temporal(3, 3, 2),
            ConvGeom {
                kernel: [5, 1, 1],
                stride: [1, 1, 1],
                padding: [0, 0, 0],
                dilation: [1, 1, 1],
            },
            ConvGeom {
                kernel: [1, 1, 1],
                stride: [1, 1, 1],
                padding: [0, 0, 0],
                dilation: [1, 1, 1],
            },
        ];
        for (i, g) in geoms.iter().enumerate() {
            let input = pseudo(&[2, 3, 5, 8, 6], i as u64 + 1);
            let weight = pseudo(&[4, 3, g.kernel[0], g.kernel[1], g.kernel[2]], 100 + i as u64);
            let bias = pseudo(&[4], 200 + i as u64);
            let fast = conv3d(&input, &weight, Some(&bias), g).unwrap();
            let slow = conv_naive(&input, &weight, &bias, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "geometry {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, conv_backward_input(g)> and likewise for weights.
        let g = ConvGeom::spatio_temporal(3, 3, 2);
        let x = pseudo(&[2, 2, 5, 6, 6], 7);
        let w = pseudo(&[3, 2, 3, 3, 3], 8);
        let y = conv3d(&x, &w, None, &g).unwrap();
        let gy = pseudo(y.shape(), 9);
        let (gx, gw, _) = conv3d_backward(&x, &w, &g, &gy, true).unwrap();
        let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
        let rhs_x: f64 = x.data().iter().zip(gx.unwrap().data()).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = w.data().iter().zip(gw.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn output_dims_follow_the_usual_formula() {
        let g = ConvGeom::spatial(3, 2, 1);
        assert_eq!(g.output_dims([1, 128, 96]), Some([1, 64, 48]));
        let g = ConvGeom::spatio_temporal(3, 3, 2);
        assert_eq!(g.output_dims([5, 64, 64]), Some([3, 32, 32]));
        assert_eq!(g.output_dims([1, 64, 64]), None);
    }

    #[test]
    fn upsample_and_concat_round_trip() {
        let x = pseudo(&[1, 2, 1, 3, 4], 3);
        let up = upsample2(&x);
        assert_eq!(up.shape(), &[1, 2, 1, 6, 8]);
        let back = upsample2_backward(&up);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
        let y = pseudo(&[1, 3, 1, 3, 4], 4);
        let cat = concat_channels(&x, &y).unwrap();
        let (a, b) = split_channels(&cat, 2);
        assert_eq!(a, x);
        assert_eq!(b, y);
    }
}
