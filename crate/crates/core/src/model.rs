//! The decaptioning network.
//!
//! The prediction for frame `t` is the clamped sum of the corrupted centre
//! frame and a learned residual computed from `T = 2N+1` strided source
//! frames and the previous output:
//!
//! ```text
//!   prediction = clamp(center + f(sources, prev_output), 0, 1)
//! ```
//!
//! Layer schedule of the hybrid variant (`c` base channels, `D` levels,
//! `ch(l) = c·2^l`):
//!
//! * aggregation stream: `agg.in` (1×3×3) then per level a strided
//!   `kt×3×3` convolution that shrinks time (valid temporal extent) and a
//!   1×3×3 convolution; time reaches 1 at the deepest level.
//! * recurrence stream over the previous output: the same spatial schedule
//!   with 2-D convolutions; its deepest feature is added to the aggregation
//!   stream's.
//! * bottleneck: one dilated 3×3 convolution per entry of
//!   `bottleneck_dilations`.
//! * decoder: nearest ×2 upsample + 3×3 convolution, concatenation with the
//!   temporally pooled skip of the same resolution, 3×3 fuse convolution.
//! * head: linear 3×3 convolution to `io_channels`.
//!
//! Every hidden layer uses a leaky rectifier with slope 0.2.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{ConvGeom, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// 3-D aggregation encoder, 2-D decoder.
    Hybrid3d2d,
    /// 3-D encoder and 3-D decoder, time collapsed only by the head.
    Enc3dDec3d,
    /// Frame-by-frame 2-D encoder and decoder on the centre frame.
    Enc2dDec2d,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Hybrid3d2d => "hybrid_3d2d",
            Variant::Enc3dDec3d => "enc3d_dec3d",
            Variant::Enc2dDec2d => "enc2d_dec2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hybrid_3d2d" => Ok(Variant::Hybrid3d2d),
            "enc3d_dec3d" => Ok(Variant::Enc3dDec3d),
            "enc2d_dec2d" => Ok(Variant::Enc2dDec2d),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// N; the window holds `2N+1` frames.
    pub temporal_radius: usize,
    pub sampling_stride: usize,
    pub base_channels: usize,
    pub encoder_depth: usize,
    pub bottleneck_dilations: Vec<usize>,
    pub use_recurrence_stream: bool,
    pub variant: Variant,
    pub io_channels: usize,
    pub init_seed: u64,
    /// Start from the identity mapping (zero residual head).
    pub zero_init_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Desk-scale full model: 16 base channels, recurrence on.
    pub fn desk() -> Self {
        ModelConfig {
            temporal_radius: 2,
            sampling_stride: 3,
            base_channels: 16,
            encoder_depth: 2,
            bottleneck_dilations: vec![2, 4, 8, 16],
            use_recurrence_stream: true,
            variant: Variant::Hybrid3d2d,
            io_channels: 3,
            init_seed: 0,
            zero_init_head: true,
        }
    }

    /// Width chosen so the full model lands near 10.5M parameters.
    pub fn paper_scale() -> Self {
        ModelConfig {
            base_channels: 84,
            ..ModelConfig::desk()
        }
    }

    /// Two levels, four channels: small enough for finite-difference checks.
    pub fn toy() -> Self {
        ModelConfig {
            base_channels: 4,
            zero_init_head: false,
            ..ModelConfig::desk()
        }
    }

    pub fn window_len(&self) -> usize {
        2 * self.temporal_radius + 1
    }

    pub fn downsampling_factor(&self) -> usize {
        1 << self.encoder_depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.temporal_radius < 1 {
            return bad("temporal_radius must be at least 1".into());
        }
        if self.sampling_stride < 1 {
            return bad("sampling_stride must be at least 1".into());
        }
        if self.base_channels < 1 || self.io_channels < 1 {
            return bad("channel counts must be positive".into());
        }
        if self.encoder_depth < 1 || self.encoder_depth > 6 {
            return bad(format!("encoder_depth {} outside 1..=6", self.encoder_depth));
        }
        if self.bottleneck_dilations.is_empty() || self.bottleneck_dilations.contains(&0) {
            return bad("bottleneck_dilations must be non-empty and positive".into());
        }
        if self.use_recurrence_stream && self.variant != Variant::Hybrid3d2d {
            return bad(format!(
                "the recurrence stream is only supported by hybrid_3d2d, not {}",
                self.variant.as_str()
            ));
        }
        Ok(())
    }

    /// Temporal kernel of each downsampling level of the aggregation stream.
    /// The kernels shrink time by `2N` in total, earlier levels first.
    pub fn temporal_kernels(&self) -> Vec<usize> {
        let d = self.encoder_depth;
        let n = self.temporal_radius;
        (0..d).map(|l| 2 * (n / d + usize::from(l < n % d)) + 1).collect()
    }

    /// Temporal extent of the aggregation stream at each level `0..=D`.
    pub fn temporal_extents(&self) -> Vec<usize> {
        let mut t = vec![self.window_len()];
        for k in self.temporal_kernels() {
            let last = *t.last().unwrap();
            t.push(last + 1 - k);
        }
        t
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn check_spatial(&self, height: usize, width: usize) -> Result<()> {
        let f = self.downsampling_factor();
        if height == 0 || width == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return Err(Error::Divisibility {
                height,
                width,
                factor: f,
                padded_height: height.div_ceil(f).max(1) * f,
                padded_width: width.div_ceil(f).max(1) * f,
            });
        }
        Ok(())
    }
}

/// One convolution's static description.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    pub activation: bool,
}

impl ConvSpec {
    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.out_channels,
            self.in_channels,
            self.geom.kernel[0],
            self.geom.kernel[1],
            self.geom.kernel[2],
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.geom.kernel_volume() + self.out_channels
    }
}

/// Anything that owns trainable tensors.
pub trait HasParameters {
    fn parameters(&self) -> &[Tensor];
}

impl HasParameters for [Tensor] {
    fn parameters(&self) -> &[Tensor] {
        self
    }
}

impl HasParameters for Vec<Tensor> {
    fn parameters(&self) -> &[Tensor] {
        self
    }
}

/// Exact number of trainable scalars.
pub fn count_parameters<M: HasParameters + ?Sized>(model: &M) -> usize {
    model.parameters().iter().map(Tensor::len).sum()
}

#[derive(Clone, Debug, Default)]
struct Topology {
    agg_in: usize,
    agg_down: Vec<usize>,
    agg_conv: Vec<usize>,
    skips: Vec<usize>,
    rec_in: Option<usize>,
    rec_down: Vec<usize>,
    rec_conv: Vec<usize>,
    bottleneck: Vec<usize>,
    dec_up: Vec<usize>,
    dec_fuse: Vec<usize>,
    head: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<ConvSpec>,
    topology: Topology,
    /// Weight then bias for each layer, in layer order.
    params: Vec<Tensor>,
}

impl HasParameters for Model {
    fn parameters(&self) -> &[Tensor] {
        &self.params
    }
}

/// One window: `T` source frames, the previous output, the centre frame and
/// optionally the clean target.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub source_frames: Vec<Image>,
    pub prev_output: Image,
    pub center_frame: Image,
    pub target_frame: Option<Image>,
}

impl WindowBatch {
    pub fn new(source_frames: Vec<Image>, prev_output: Image, target_frame: Option<Image>) -> Result<Self> {
        if source_frames.is_empty() || source_frames.len().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "window needs an odd number of frames, got {}",
                source_frames.len()
            )));
        }
        let center_frame = source_frames[source_frames.len() / 2].clone();
        let batch = WindowBatch {
            source_frames,
            prev_output,
            center_frame,
            target_frame,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn window_len(&self) -> usize {
        self.source_frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.center_frame.dims();
        let members = self
            .source_frames
            .iter()
            .chain(std::iter::once(&self.prev_output))
            .chain(self.target_frame.iter());
        for img in members {
            if img.dims() != dims {
                return Err(Error::Shape(format!(
                    "window member {:?} vs centre {:?}",
                    img.dims(),
                    dims
                )));
            }
            if !img.in_unit_range() {
                return Err(Error::Shape("window values must lie in [0, 1]".into()));
            }
        }
        if self.source_frames[self.source_frames.len() / 2] != self.center_frame {
            return Err(Error::Shape("centre frame differs from the middle source frame".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualOutput {
    pub residual: Image,
    pub prediction: Image,
}

/// Packed network inputs for a batch of windows.
#[derive(Clone, Debug)]
pub struct BatchTensors {
    /// `[B, C, T, H, W]`
    pub sources: Tensor,
    /// `[B, C, 1, H, W]`
    pub center: Tensor,
    /// `[B, C, 1, H, W]`
    pub prev: Tensor,
}

impl BatchTensors {
    pub fn pack(windows: &[&WindowBatch]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (c, h, w) = first.center_frame.dims();
        let t = first.window_len();
        let b = windows.len();
        let mut sources = Vec::with_capacity(b * c * t * h * w);
        let mut center = Vec::with_capacity(b * c * h * w);
        let mut prev = Vec::with_capacity(b * c * h * w);
        for win in windows {
            if win.center_frame.dims() != (c, h, w) || win.window_len() != t {
                return Err(Error::Shape("windows in a batch must share shape".into()));
            }
            if win.prev_output.dims() != (c, h, w) {
                return Err(Error::Shape(format!(
                    "prev_output {:?} vs source frames {:?}",
                    win.prev_output.dims(),
                    (c, h, w)
                )));
            }
            for ch in 0..c {
                for f in &win.source_frames {
                    sources.extend_from_slice(f.plane(ch));
                }
            }
            center.extend_from_slice(win.center_frame.data());
            prev.extend_from_slice(win.prev_output.data());
        }
        Ok(BatchTensors {
            sources: Tensor::from_vec(&[b, c, t, h, w], sources)?,
            center: Tensor::from_vec(&[b, c, 1, h, w], center)?,
            prev: Tensor::from_vec(&[b, c, 1, h, w], prev)?,
        })
    }
}

/// Graph handles produced by [`Model::forward_graph`].
pub struct ForwardVars {
    pub params: Vec<Var>,
    pub residual: Var,
    pub prediction: Var,
}

/// Split sample `index` of a `[B, C, 1, H, W]` tensor into an image.
pub fn tensor_sample_image(t: &Tensor, index: usize) -> Image {
    let [_, c, d, h, w] = t.dims5();
    debug_assert_eq!(d, 1);
    let n = c * h * w;
    Image::from_vec(c, h, w, t.data()[index * n..(index + 1) * n].to_vec()).expect("sample dims")
}

/// Build the network for `config` with seeded fan-in initialisation.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut layers = Vec::new();
    let mut topo = Topology::default();
    let c = config.base_channels;
    let io = config.io_channels;
    let depth = config.encoder_depth;
    let ch = |l: usize| c << l;
    let add = |layers: &mut Vec<ConvSpec>, name: String, cin: usize, cout: usize, geom: ConvGeom, act: bool| {
        layers.push(ConvSpec {
            name,
            in_channels: cin,
            out_channels: cout,
            geom,
            activation: act,
        });
        layers.len() - 1
    };

    match config.variant {
        Variant::Hybrid3d2d | Variant::Enc2dDec2d => {
            let two_d = config.variant == Variant::Enc2dDec2d;
            let kernels = if two_d {
                vec![1; depth]
            } else {
                config.temporal_kernels()
            };
            let extents = if two_d {
                vec![1; depth + 1]
            } else {
                config.temporal_extents()
            };
            let stream = if two_d { "enc" } else { "agg" };
            topo.agg_in = add(
                &mut layers,
                format!("{stream}.in"),
                io,
                c,
                ConvGeom::spatial(3, 1, 1),
                true,
            );
            for l in 1..=depth {
                topo.agg_down.push(add(
                    &mut layers,
                    format!("{stream}.down{l}"),
                    ch(l - 1),
                    ch(l),
                    ConvGeom::spatio_temporal(kernels[l - 1], 3, 2),
                    true,
                ));
                topo.agg_conv.push(add(
                    &mut layers,
                    format!("{stream}.conv{l}"),
                    ch(l),
                    ch(l),
                    ConvGeom::spatial(3, 1, 1),
                    true,
                ));
            }
            for (l, &t) in extents.iter().enumerate().take(depth) {
                topo.skips.push(add(
                    &mut layers,
                    format!("skip{l}.pool"),
                    ch(l),
                    ch(l),
                    ConvGeom {
                        kernel: [t, 1, 1],
                        stride: [1, 1, 1],
                        padding: [0, 0, 0],
                        dilation: [1, 1, 1],
                    },
                    true,
                ));
            }
            if config.use_recurrence_stream {
                topo.rec_in = Some(add(
                    &mut layers,
                    "rec.in".into(),
                    io,
                    c,
                    ConvGeom::spatial(3, 1, 1),
                    true,
                ));
                for l in 1..=depth {
                    topo.rec_down.push(add(
                        &mut layers,
                        format!("rec.down{l}"),
                        ch(l - 1),
                        ch(l),
                        ConvGeom::spatial(3, 2, 1),
                        true,
                    ));
                    topo.rec_conv.push(add(
                        &mut layers,
                        format!("rec.conv{l}"),
                        ch(l),
                        ch(l),
                        ConvGeom::spatial(3, 1, 1),
                        true,
                    ));
                }
            }
            for (i, &d) in config.bottleneck_dilations.iter().enumerate() {
                topo.bottleneck.push(add(
                    &mut layers,
                    format!("bottleneck{i}"),
                    ch(depth),
                    ch(depth),
                    ConvGeom::spatial(3, 1, d),
                    true,
                ));
            }
            for l in (1..=depth).rev() {
                topo.dec_up.push(add(
                    &mut layers,
                    format!("dec.up{l}"),
                    ch(l),
                    ch(l - 1),
                    ConvGeom::spatial(3, 1, 1),
                    true,
                ));
                topo.dec_fuse.push(add(
                    &mut layers,
                    format!("dec.fuse{l}"),
                    2 * ch(l - 1),
                    ch(l - 1),
                    ConvGeom::spatial(3, 1, 1),
                    true,
                ));
            }
            topo.head = add(&mut layers, "head".into(), c, io, ConvGeom::spatial(3, 1, 1), false);
        }
        Variant::Enc3dDec3d => {
            let t = config.window_len();
            let cube = |stride: usize, dil: usize| ConvGeom {
                kernel: [3, 3, 3],
                stride: [1, stride, stride],
                padding: [1, dil, dil],
                dilation: [1, dil, dil],
            };
            topo.agg_in = add(&mut layers, "enc3d.in".into(), io, c, cube(1, 1), true);
            for l in 1..=depth {
                topo.agg_down.push(add(
                    &mut layers,
                    format!("enc3d.down{l}"),
                    ch(l - 1),
                    ch(l),
                    cube(2, 1),
                    true,
                ));
                topo.agg_conv.push(add(
                    &mut layers,
                    format!("enc3d.conv{l}"),
                    ch(l),
                    ch(l),
                    cube(1, 1),
                    true,
                ));
            }
            for (i, &d) in config.bottleneck_dilations.iter().enumerate() {
                topo.bottleneck.push(add(
                    &mut layers,
                    format!("bottleneck{i}"),
                    ch(depth),
                    ch(depth),
                    cube(1, d),
                    true,
                ));
            }
            for l in (1..=depth).rev() {
                topo.dec_up.push(add(
                    &mut layers,
                    format!("dec3d.up{l}"),
                    ch(l),
                    ch(l - 1),
                    cube(1, 1),
                    true,
                ));
                topo.dec_fuse.push(add(
                    &mut layers,
                    format!("dec3d.fuse{l}"),
                    2 * ch(l - 1),
                    ch(l - 1),
                    cube(1, 1),
                    true,
                ));
            }
            topo.head = add(
                &mut layers,
                "head".into(),
                c,
                io,
                ConvGeom {
                    kernel: [t, 3, 3],
                    stride: [1, 1, 1],
                    padding: [0, 1, 1],
                    dilation: [1, 1, 1],
                },
                false,
            );
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut params = Vec::with_capacity(2 * layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let fan_in = (layer.in_channels * layer.geom.kernel_volume()) as f64;
        let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
        let n: usize = layer.weight_shape().iter().product();
        let zero = config.zero_init_head && i == topo.head;
        let data = (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(-bound..bound);
                if zero {
                    0.0
                } else {
                    u
                }
            })
            .collect();
        params.push(Tensor::from_vec(&layer.weight_shape(), data)?);
        params.push(Tensor::zeros(&[layer.out_channels]));
    }

    Ok(Model {
        config: config.clone(),
        layers,
        topology: topo,
        params,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// `layer.weight` / `layer.bias` names, aligned with [`HasParameters::parameters`].
    pub fn parameter_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    /// Replace all parameters, checking names' shapes line up.
    pub fn set_parameters(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (new, old) in params.iter().zip(&self.params) {
            if new.shape() != old.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?} vs {:?}",
                    new.shape(),
                    old.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Zero the residual-producing head so the network is the identity.
    pub fn zero_residual_head(&mut self) {
        let h = self.topology.head;
        for p in &mut self.params[2 * h..2 * h + 2] {
            p.data_mut().fill(0.0);
        }
    }

    /// Index range of the head's weight and bias in the parameter list.
    pub fn head_parameter_indices(&self) -> [usize; 2] {
        [2 * self.topology.head, 2 * self.topology.head + 1]
    }

    fn conv_layer(&self, g: &mut Graph, params: &[Var], x: Var, idx: usize) -> Result<Var> {
        let spec = &self.layers[idx];
        let y = g.conv(x, params[2 * idx], params[2 * idx + 1], spec.geom)?;
        Ok(if spec.activation {
            g.leaky_relu(y, LEAKY_SLOPE)
        } else {
            y
        })
    }

    /// Record the network on `g`. Parameters enter as trainable leaves when
    /// `trainable` is set, otherwise as constants.
    pub fn forward_graph(&self, g: &mut Graph, inputs: &BatchTensors, trainable: bool) -> Result<ForwardVars> {
        let [_, c, t, h, w] = inputs.sources.dims5();
        if c != self.config.io_channels {
            return Err(Error::Shape(format!(
                "model expects {} channels, got {c}",
                self.config.io_channels
            )));
        }
        if t != self.config.window_len() {
            return Err(Error::Shape(format!(
                "model expects {} frames per window, got {t}",
                self.config.window_len()
            )));
        }
        if inputs.prev.shape() != inputs.center.shape() || inputs.center.dims5()[3..] != [h, w] {
            return Err(Error::Shape(format!(
                "prev_output {:?} vs source frames {:?}",
                inputs.prev.shape(),
                inputs.sources.shape()
            )));
        }
        self.config.check_spatial(h, w)?;

        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.parameter(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        let topo = &self.topology;
        let depth = self.config.encoder_depth;

        let residual = match self.config.variant {
            Variant::Hybrid3d2d | Variant::Enc2dDec2d => {
                let input = if self.config.variant == Variant::Enc2dDec2d {
                    g.constant(inputs.center.clone())
                } else {
                    g.constant(inputs.sources.clone())
                };
                let mut feats = Vec::with_capacity(depth + 1);
                let mut x = self.conv_layer(g, &params, input, topo.agg_in)?;
                feats.push(x);
                for l in 0..depth {
                    x = self.conv_layer(g, &params, x, topo.agg_down[l])?;
                    x = self.conv_layer(g, &params, x, topo.agg_conv[l])?;
                    feats.push(x);
                }
                debug_assert_eq!(g.value(x).dims5()[2], 1);
                if let Some(rec_in) = topo.rec_in {
                    let prev = g.constant(inputs.prev.clone());
                    let mut r = self.conv_layer(g, &params, prev, rec_in)?;
                    for l in 0..depth {
                        r = self.conv_layer(g, &params, r, topo.rec_down[l])?;
                        r = self.conv_layer(g, &params, r, topo.rec_conv[l])?;
                    }
                    x = g.add(x, r)?;
                }
                for &b in &topo.bottleneck {
                    x = self.conv_layer(g, &params, x, b)?;
                }
                for (i, l) in (0..depth).rev().enumerate() {
                    x = g.upsample2(x);
                    x = self.conv_layer(g, &params, x, topo.dec_up[i])?;
                    let skip = self.conv_layer(g, &params, feats[l], topo.skips[l])?;
                    x = g.concat(x, skip)?;
                    x = self.conv_layer(g, &params, x, topo.dec_fuse[i])?;
                }
                self.conv_layer(g, &params, x, topo.head)?
            }
            Variant::Enc3dDec3d => {
                let input = g.constant(inputs.sources.clone());
                let mut feats = Vec::with_capacity(depth + 1);
                let mut x = self.conv_layer(g, &params, input, topo.agg_in)?;
                feats.push(x);
                for l in 0..depth {
                    x = self.conv_layer(g, &params, x, topo.agg_down[l])?;
                    x = self.conv_layer(g, &params, x, topo.agg_conv[l])?;
                    feats.push(x);
                }
                for &b in &topo.bottleneck {
                    x = self.conv_layer(g, &params, x, b)?;
                }
                for (i, l) in (0..depth).rev().enumerate() {
                    x = g.upsample2(x);
                    x = self.conv_layer(g, &params, x, topo.dec_up[i])?;
                    x = g.concat(x, feats[l])?;
                    x = self.conv_layer(g, &params, x, topo.dec_fuse[i])?;
                }
                self.conv_layer(g, &params, x, topo.head)?
            }
        };

        let center = g.constant(inputs.center.clone());
        let sum = g.add(center, residual)?;
        let prediction = g.clamp01(sum);
        Ok(ForwardVars {
            params,
            residual,
            prediction,
        })
    }

    /// Residual and clamped prediction for a single window.
    pub fn forward(&self, batch: &WindowBatch) -> Result<ResidualOutput> {
        batch.validate()?;
        let inputs = BatchTensors::pack(&[batch])?;
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, &inputs, false)?;
        Ok(ResidualOutput {
            residual: tensor_sample_image(g.value(vars.residual), 0),
            prediction: tensor_sample_image(g.value(vars.prediction), 0),
        })
    }

    /// Shapes of every intermediate feature for a `[T, h, w]` input, used to
    /// check the structural properties of the network.
    pub fn skip_shapes(&self, height: usize, width: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        self.config.check_spatial(height, width)?;
        let c = self.config.io_channels;
        let t = self.config.window_len();
        let frames: Vec<Image> = (0..t).map(|_| Image::filled(c, height, width, 0.5)).collect();
        let win = WindowBatch::new(frames, Image::filled(c, height, width, 0.5), None)?;
        let inputs = BatchTensors::pack(&[&win])?;
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let topo = &self.topology;
        if topo.skips.is_empty() {
            return Ok(Vec::new());
        }
        let input = if self.config.variant == Variant::Enc2dDec2d {
            g.constant(inputs.center)
        } else {
            g.constant(inputs.sources)
        };
        let mut feats = Vec::new();
        let mut x = self.conv_layer(&mut g, &params, input, topo.agg_in)?;
        feats.push(x);
        for l in 0..self.config.encoder_depth {
            x = self.conv_layer(&mut g, &params, x, topo.agg_down[l])?;
            x = self.conv_layer(&mut g, &params, x, topo.agg_conv[l])?;
            feats.push(x);
        }
        let mut out = Vec::new();
        for (l, &s) in topo.skips.iter().enumerate() {
            let pooled = self.conv_layer(&mut g, &params, feats[l], s)?;
            out.push((g.value(feats[l]).shape().to_vec(), g.value(pooled).shape().to_vec()));
        }
        out.push((g.value(x).shape().to_vec(), g.value(x).shape().to_vec()));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(t: usize, h: usize, w: usize, v: f64) -> WindowBatch {
        let frames = (0..t)
            .map(|k| Image::from_fn(3, h, w, |c, y, x| ((c + y + x + k) % 7) as f64 / 7.0 * v))
            .collect();
        WindowBatch::new(frames, Image::filled(3, h, w, 0.25), None).unwrap()
    }

    #[test]
    fn single_conv_parameter_count() {
        let spec = ConvSpec {
            name: "c".into(),
            in_channels: 3,
            out_channels: 4,
            geom: ConvGeom::spatial(3, 1, 1),
            activation: false,
        };
        assert_eq!(spec.parameter_count(), 112);
        let params = vec![Tensor::zeros(&spec.weight_shape()), Tensor::zeros(&[4])];
        assert_eq!(count_parameters(&params), 112);
        assert_eq!(count_parameters(&Vec::<Tensor>::new()), 0);
    }

    #[test]
    fn layer_count_matches_parameters() {
        let m = build_model(&ModelConfig::desk()).unwrap();
        let by_spec: usize = m.layers().iter().map(ConvSpec::parameter_count).sum();
        assert_eq!(count_parameters(&m), by_spec);
        assert_eq!(m.parameter_names().len(), m.parameters().len());
    }

    #[test]
    fn temporal_schedule_reaches_one() {
        for n in 1..5 {
            for d in 1..4 {
                let cfg = ModelConfig {
                    temporal_radius: n,
                    encoder_depth: d,
                    ..ModelConfig::toy()
                };
                assert_eq!(*cfg.temporal_extents().last().unwrap(), 1, "N={n} D={d}");
            }
        }
        assert_eq!(ModelConfig::desk().temporal_extents(), vec![5, 3, 1]);
    }

    #[test]
    fn config_conflicts_are_rejected() {
        let cfg = ModelConfig {
            variant: Variant::Enc2dDec2d,
            ..ModelConfig::toy()
        };
        assert!(build_model(&cfg).is_err());
        let cfg = ModelConfig {
            bottleneck_dilations: vec![],
            ..ModelConfig::toy()
        };
        assert!(build_model(&cfg).is_err());
        let cfg = ModelConfig {
            temporal_radius: 0,
            ..ModelConfig::toy()
        };
        assert!(build_model(&cfg).is_err());
    }

    #[test]
    fn indivisible_input_reports_padding() {
        let m = build_model(&ModelConfig::toy()).unwrap();
        match m.forward(&window(5, 18, 16, 1.0)) {
            Err(Error::Divisibility {
                padded_height,
                padded_width,
                ..
            }) => {
                assert_eq!((padded_height, padded_width), (20, 16));
            }
            other => panic!("expected divisibility error, got {other:?}"),
        }
    }

    #[test]
    fn prev_output_shape_mismatch_is_rejected() {
        let m = build_model(&ModelConfig::toy()).unwrap();
        let mut win = window(5, 16, 16, 1.0);
        win.prev_output = Image::filled(3, 8, 16, 0.1);
        assert!(m.forward(&win).is_err());
    }

    #[test]
    fn every_variant_preserves_spatial_shape() {
        for (variant, rec) in [
            (Variant::Hybrid3d2d, true),
            (Variant::Hybrid3d2d, false),
            (Variant::Enc2dDec2d, false),
            (Variant::Enc3dDec3d, false),
        ] {
            let cfg = ModelConfig {
                variant,
                use_recurrence_stream: rec,
                ..ModelConfig::toy()
            };
            let m = build_model(&cfg).unwrap();
            let out = m.forward(&window(5, 8, 12, 1.0)).unwrap();
            assert_eq!(out.prediction.dims(), (3, 8, 12), "{variant:?}");
            assert!(out.prediction.in_unit_range());
        }
    }
}
