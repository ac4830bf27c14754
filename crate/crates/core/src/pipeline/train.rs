//! Truncated recurrent training.
//!
//! Each optimizer update draws `batch_size` sequences of `recurrence_steps`
//! consecutive frames (one clip, crop and augmentation per sequence). The
//! sequences are unrolled in lockstep: each step's prediction becomes the
//! next step's recurrence input, detached from the graph. Gradients from all
//! steps are summed into a single Adam update.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::config::{RunConfig, TemporalReference};
use super::optim::{Adam, AdamParams};
use crate::autograd::Graph;
use crate::datagen::{window_indices, Augmentation, ClipPair};
use crate::error::{Error, Result};
use crate::flowwarp::{self, FlowField, OcclusionMask};
use crate::image::Image;
use crate::losses::{total_loss_grad, EnabledTerms, LossBreakdown, TemporalTarget};
use crate::model::{build_model, tensor_sample_image, BatchTensors, HasParameters, Model, WindowBatch};
use crate::tensor::Tensor;

/// Model, optimizer and position of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub run: RunConfig,
    pub model: Model,
    pub adam: Adam,
    /// Updates applied so far.
    pub step: u64,
}

impl TrainState {
    pub fn new(run: RunConfig) -> Result<TrainState> {
        run.validate()?;
        let model = build_model(&run.model)?;
        let t = &run.train;
        let adam = Adam::new(
            AdamParams {
                lr: t.learning_rate,
                beta1: t.adam_beta1,
                beta2: t.adam_beta2,
                eps: t.adam_eps,
            },
            model.parameters(),
        );
        Ok(TrainState {
            run,
            model,
            adam,
            step: 0,
        })
    }
}

/// One line of the loss log. Terms that are switched off are not written.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

impl LossRecord {
    pub fn to_json_line(&self, enabled: EnabledTerms) -> String {
        let l = &self.losses;
        let mut s = format!("{{\"step\":{}", self.step);
        for (on, name, v) in [
            (enabled.l1, "l1", l.l1),
            (enabled.grad_l1, "grad_l1", l.grad_l1),
            (enabled.ssim, "ssim_term", l.ssim_term),
            (enabled.temporal, "temporal", l.temporal),
            (true, "total", l.total),
        ] {
            if on {
                s += &format!(",\"{name}\":{v:?}");
            }
        }
        s + "}"
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Periodic and final checkpoints go here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Loss log, appended to.
    pub log_path: Option<PathBuf>,
    /// Print a progress line every this many steps (0: silent).
    pub print_every: u64,
}

pub fn checkpoint_path(dir: &std::path::Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Where one sequence of a batch lives.
struct Sequence {
    clip: usize,
    t0: usize,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    aug: Augmentation,
    prev: Option<Image>,
}

impl Sequence {
    fn prep(&self, img: &Image) -> Result<Image> {
        Ok(self.aug.apply(&img.crop(self.top, self.left, self.height, self.width)?))
    }

    fn prep_mask(&self, mask: &OcclusionMask) -> OcclusionMask {
        let m = mask.crop(self.top, self.left, self.height, self.width);
        if self.aug.flip {
            m.flip_horizontal()
        } else {
            m
        }
    }

    fn prep_flow(&self, flow: &FlowField) -> FlowField {
        let f = FlowField::from_fn(self.height, self.width, |y, x| flow.get(self.top + y, self.left + x));
        if self.aug.flip {
            f.flip_horizontal()
        } else {
            f
        }
    }
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn plan_sequences(state: &TrainState, clips: &[ClipPair], rng: &mut ChaCha8Rng) -> Result<Vec<Sequence>> {
    let tc = &state.run.train;
    let sampler = state.run.sampler();
    (0..tc.batch_size)
        .map(|_| {
            let clip = rng.gen_range(0..clips.len());
            let c = &clips[clip];
            let (_, h, w) = c.dims();
            if c.len() < tc.recurrence_steps {
                return Err(Error::Config(format!(
                    "clip of {} frames is shorter than recurrence_steps {}",
                    c.len(),
                    tc.recurrence_steps
                )));
            }
            let t0 = rng.gen_range(0..=c.len() - tc.recurrence_steps);
            let (height, width) = if tc.crop > 0 { (tc.crop, tc.crop) } else { (h, w) };
            if height > h || width > w {
                return Err(Error::TooSmall(format!("crop {height}x{width} exceeds {h}x{w} frames")));
            }
            let top = rng.gen_range(0..=h - height);
            let left = rng.gen_range(0..=w - width);
            let aug = Augmentation::sample(rng, &sampler);
            Ok(Sequence {
                clip,
                t0,
                top,
                left,
                height,
                width,
                aug,
                prev: None,
            })
        })
        .collect()
}

/// Apply one update. Returns the mean loss per frame of the batch.
pub fn train_step(state: &mut TrainState, clips: &[ClipPair]) -> Result<LossBreakdown> {
    if clips.is_empty() {
        return Err(Error::Missing("no training clips".into()));
    }
    let run = state.run.clone();
    let (mc, tc) = (&run.model, &run.train);
    let mut rng = step_rng(tc.seed, state.step);
    let mut seqs = plan_sequences(state, clips, &mut rng)?;
    mc.check_spatial(seqs[0].height, seqs[0].width)?;

    let frames = (tc.batch_size * tc.recurrence_steps) as f64;
    let mut acc: Vec<Tensor> = state
        .model
        .parameters()
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    let mut mean = LossBreakdown::default();

    for s in 0..tc.recurrence_steps {
        let mut windows = Vec::with_capacity(seqs.len());
        let mut targets = Vec::with_capacity(seqs.len());
        let mut temporal = Vec::with_capacity(seqs.len());
        for seq in &seqs {
            let clip = &clips[seq.clip];
            let t = seq.t0 + s;
            let idx = window_indices(t, clip.len(), mc.temporal_radius, mc.sampling_stride)?;
            let sources = idx
                .iter()
                .map(|&i| seq.prep(&clip.corrupted[i]))
                .collect::<Result<Vec<_>>>()?;
            let prev = match &seq.prev {
                Some(p) => p.clone(),
                None => seq.prep(&clip.corrupted[t.saturating_sub(1)])?,
            };
            let target = seq.prep(&clip.clean[t])?;
            windows.push(WindowBatch::new(sources, prev, Some(target.clone()))?);
            targets.push(target);
            temporal.push(match clip.step(t) {
                Some(st) if run.loss.enabled.temporal => Some(match (&seq.prev, tc.temporal_reference) {
                    (Some(p), TemporalReference::PreviousOutput) => {
                        TemporalTarget::new(p, &seq.prep_flow(&st.backward), seq.prep_mask(&st.mask))?
                    }
                    _ => TemporalTarget {
                        warped_prev: seq.prep(&flowwarp::warp(&clip.clean[t - 1], &st.backward)?)?,
                        mask: seq.prep_mask(&st.mask),
                    },
                }),
                _ => None,
            });
        }

        let refs: Vec<&WindowBatch> = windows.iter().collect();
        let inputs = BatchTensors::pack(&refs)?;
        let mut g = Graph::new();
        let vars = state.model.forward_graph(&mut g, &inputs, true)?;
        let pred_t = g.value(vars.prediction).clone();
        let per = pred_t.len() / seqs.len();
        let mut grad = vec![0.0; pred_t.len()];
        let mut value = 0.0;
        for (b, seq) in seqs.iter_mut().enumerate() {
            let pred = tensor_sample_image(&pred_t, b);
            let mut weights = run.loss.clone();
            weights.enabled.temporal &= temporal[b].is_some();
            let (bd, gimg) = total_loss_grad(&pred, &targets[b], temporal[b].as_ref(), &weights)?;
            mean.add_scaled(&bd, 1.0 / frames);
            value += bd.total / frames;
            for (d, v) in grad[b * per..(b + 1) * per].iter_mut().zip(gimg.data()) {
                *d = v / frames;
            }
            seq.prev = Some(pred);
        }
        if !value.is_finite() {
            return Err(Error::Diverged {
                step: state.step + 1,
                loss: value,
            });
        }
        let root = g.loss(vars.prediction, value, Tensor::from_vec(pred_t.shape(), grad)?)?;
        let grads = g.backward(root)?;
        for (a, &p) in acc.iter_mut().zip(&vars.params) {
            if let Some(gp) = grads.get(p) {
                a.add_assign(gp);
            }
        }
    }

    if !mean.total.is_finite() || acc.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged {
            step: state.step + 1,
            loss: mean.total,
        });
    }
    state.adam.step(state.model.parameters_mut(), &acc)?;
    state.step += 1;
    Ok(mean)
}

/// Train until `run.train.steps` updates have been applied in total.
pub fn train(state: &mut TrainState, clips: &[ClipPair], opts: &TrainOptions) -> Result<Vec<LossRecord>> {
    state.run.validate()?;
    let mut log = match &opts.log_path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Some((
                p.clone(),
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?,
            ))
        }
        None => None,
    };
    let enabled = state.run.loss.enabled;
    let every = state.run.train.checkpoint_every;
    let mut records = Vec::new();
    while state.step < state.run.train.steps {
        let losses = train_step(state, clips)?;
        let rec = LossRecord {
            step: state.step,
            losses,
        };
        if let Some((p, f)) = log.as_mut() {
            writeln!(f, "{}", rec.to_json_line(enabled)).map_err(|e| Error::io(p.as_path(), e))?;
        }
        if opts.print_every > 0 && state.step.is_multiple_of(opts.print_every) {
            eprintln!("{}", rec.to_json_line(enabled));
        }
        records.push(rec);
        if let Some(dir) = &opts.checkpoint_dir {
            if every > 0 && state.step.is_multiple_of(every) {
                save_checkpoint(state, &checkpoint_path(dir, state.step))?;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        save_checkpoint(state, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(records)
}
