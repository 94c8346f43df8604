use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::attention::Mat;
use super::block::{block_backward, block_forward_cached, BlockCache};
use super::config::{GateMode, OptimConfig};
use super::model::{Checkpoint, InferenceMode, ParamKind, Params};
use crate::control::ControlScalar;
use crate::error::{Error, Result};
use crate::forge::{ClipSample, FrameBuffer};
use crate::rng;

/// Fixed linear patch codec standing in for a video VAE.
///
/// Frames are mapped to `[-1, 1]`, area-resampled to `grid × grid`, cut into
/// `patch × patch` RGB patches and projected to `dim` through a fixed matrix
/// with orthonormal columns (or rows, when `dim` is smaller than a patch).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    pub grid: usize,
    pub patch: usize,
    pub frames: usize,
    pub dim: usize,
    proj: Mat,
}

impl LatentCodec {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_layout(dim, 16, 4, 4, seed)
    }

    pub fn with_layout(dim: usize, grid: usize, patch: usize, frames: usize, seed: u64) -> Self {
        let pv = patch * patch * 3;
        let mut rng = rng::stream(seed, &[0xc0dec]);
        let (r, c) = (dim.max(pv), dim.min(pv));
        let g = Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let proj = if dim >= pv { q } else { q.transpose() };
        Self {
            grid,
            patch,
            frames,
            dim,
            proj,
        }
    }

    fn patches_per_side(&self) -> usize {
        self.grid / self.patch
    }

    pub fn n_tokens(&self) -> usize {
        self.frames * self.patches_per_side().pow(2)
    }

    /// Picks `frames` evenly spaced frames (repeating when the clip is shorter).
    pub fn encode(&self, clip: &[FrameBuffer]) -> Result<Mat> {
        if clip.is_empty() {
            return Err(Error::Contract("cannot encode an empty clip".into()));
        }
        let pps = self.patches_per_side();
        let pv = self.patch * self.patch * 3;
        let mut out = Mat::zeros(self.n_tokens(), self.dim);
        for f in 0..self.frames {
            let idx = if clip.len() == 1 || self.frames == 1 {
                0
            } else {
                ((f * (clip.len() - 1)) as f64 / (self.frames - 1) as f64).round() as usize
            };
            let small = clip[idx.min(clip.len() - 1)].downsample(self.grid, self.grid);
            for py in 0..pps {
                for px in 0..pps {
                    let mut v = nalgebra::DVector::<f64>::zeros(pv);
                    let mut k = 0;
                    for y in 0..self.patch {
                        for x in 0..self.patch {
                            let p = small.pixel(px * self.patch + x, py * self.patch + y);
                            for ch in p {
                                v[k] = 2.0 * ch - 1.0;
                                k += 1;
                            }
                        }
                    }
                    let token = &self.proj * v;
                    out.row_mut(f * pps * pps + py * pps + px).copy_from(&token.transpose());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(&self, latent: &Mat) -> Result<Vec<FrameBuffer>> {
        if latent.nrows() != self.n_tokens() || latent.ncols() != self.dim {
            return Err(Error::Contract(format!(
                "latent is {}x{}, codec expects {}x{}",
                latent.nrows(),
                latent.ncols(),
                self.n_tokens(),
                self.dim
            )));
        }
        let pps = self.patches_per_side();
        let pt = self.proj.transpose();
        let mut frames = Vec::with_capacity(self.frames);
        for f in 0..self.frames {
            let mut fb = FrameBuffer::zeros(self.grid, self.grid);
            for py in 0..pps {
                for px in 0..pps {
                    let tok = latent.row(f * pps * pps + py * pps + px).transpose();
                    let v = &pt * tok;
                    let mut k = 0;
                    for y in 0..self.patch {
                        for x in 0..self.patch {
                            let rgb = [v[k], v[k + 1], v[k + 2]].map(|u| (u + 1.0) / 2.0);
                            fb.set_pixel(px * self.patch + x, py * self.patch + y, rgb);
                            k += 3;
                        }
                    }
                }
            }
            frames.push(fb);
        }
        Ok(frames)
    }
}

/// Deterministic pseudo text encoder: Gaussian tokens seeded by the prompt hash.
pub fn text_embedding(prompt: &str, n_tokens: usize, dim: usize) -> Mat {
    let mut rng = rng::stream(rng::fnv1a(prompt.as_bytes()), &[0x7e47]);
    Mat::from_fn(n_tokens, dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub const TEXT_TOKENS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub x0: Mat,
    pub text: Mat,
    pub c: ControlScalar,
    pub noise: Mat,
    /// Interpolation time in (0, 1]; `x_t = (1 - t) x0 + t ε`.
    pub t: f64,
}

impl TrainSample {
    pub fn x_t(&self) -> Mat {
        &self.x0 * (1.0 - self.t) + &self.noise * self.t
    }

    /// Velocity target `ε − x0`.
    pub fn target(&self) -> Mat {
        &self.noise - &self.x0
    }
}

/// Encodes clips and attaches a fixed per-sample noise draw and time.
pub fn make_samples(
    clips: &[ClipSample],
    codec: &LatentCodec,
    caption: &str,
    text_dim: usize,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let text = text_embedding(caption, TEXT_TOKENS, text_dim);
    clips
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            let x0 = codec.encode(&clip.frames)?;
            let mut rng = rng::stream(seed, &[0x5a, i as u64]);
            let noise = Mat::from_fn(x0.nrows(), x0.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let t = 0.05 + 0.95 * rng::unit_open(seed, &[0x7, i as u64]);
            Ok(TrainSample {
                x0,
                text: text.clone(),
                c: clip.condition.c,
                noise,
                t,
            })
        })
        .collect()
}

/// Mean squared velocity error over the batch and its gradient.
pub fn loss_and_grads(ckpt: &Checkpoint, batch: &[TrainSample]) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut grads = ckpt.params.zeros_like();
    let n_total: usize = batch.iter().map(|s| s.x0.len()).sum();
    let mut loss = 0.0;
    for s in batch {
        let x_t = s.x_t();
        let mut x = x_t.clone();
        let mut caches: Vec<BlockCache> = Vec::with_capacity(ckpt.blocks.len());
        for i in 0..ckpt.blocks.len() {
            let p = ckpt.block_params(i, InferenceMode::Joint);
            let g = p.adapter.map_or(0.0, |a| a.gate);
            let (out, cache) = block_forward_cached(&p, &x, &s.text, s.c.value(), g)?;
            caches.push(cache);
            x = out;
        }
        let resid = (x - &x_t) - s.target();
        loss += resid.norm_squared();
        let mut dx = resid * (2.0 / n_total as f64);
        for i in (0..ckpt.blocks.len()).rev() {
            let p = ckpt.block_params(i, InferenceMode::Joint);
            let (dprev, bg) = block_backward(&p, &caches[i], &dx);
            if let Some(lg) = bg.lora {
                let acc = &mut grads.lora[i];
                for t in super::block::Target::ALL {
                    acc.pair_mut(t).a += &lg.pair(t).a;
                    acc.pair_mut(t).b += &lg.pair(t).b;
                }
            }
            if let (Some(ag), Some(acc)) = (bg.adapter, grads.adapters.get_mut(&i)) {
                acc.mlp0_w += ag.mlp0_w;
                acc.mlp0_b += ag.mlp0_b;
                acc.mlp1_w += ag.mlp1_w;
                acc.mlp1_b += ag.mlp1_b;
                acc.kproj_w += ag.kproj_w;
                acc.kproj_b += ag.kproj_b;
                acc.vproj_w += ag.vproj_w;
                acc.vproj_b += ag.vproj_b;
                acc.gate += ag.gate;
            }
            dx = dprev;
        }
    }
    Ok((loss / n_total as f64, grads))
}

fn trainable(kind: ParamKind, opt: &OptimConfig, gate_mode: GateMode) -> bool {
    match kind {
        ParamKind::Lora => opt.train_lora,
        ParamKind::Adapter => true,
        ParamKind::Gate => gate_mode == GateMode::Learned,
    }
}

/// One AdamW update on LoRA and adapter parameters. Returns the pre-update loss.
pub fn train_step(ckpt: &mut Checkpoint, batch: &[TrainSample], opt: &OptimConfig) -> Result<f64> {
    opt.validate()?;
    let step = ckpt.step + 1;
    let (loss, grads) = loss_and_grads(ckpt, batch)?;
    if !loss.is_finite() {
        return Err(Error::Training {
            step,
            message: format!("non-finite loss {loss}"),
        });
    }
    let grads = grads.to_flat();
    let lr = opt.lr_at(step);
    let (bc1, bc2) = (1.0 - opt.beta1.powi(step as i32), 1.0 - opt.beta2.powi(step as i32));
    let gate_mode = ckpt.config.gate_mode;
    let optim = &mut ckpt.optim;
    ckpt.params.for_each_mut(|name, kind, p| {
        if !trainable(kind, opt, gate_mode) {
            return;
        }
        let g = &grads[name];
        let m = optim.m.entry(name.to_string()).or_insert_with(|| vec![0.0; p.len()]);
        let v = optim.v.entry(name.to_string()).or_insert_with(|| vec![0.0; p.len()]);
        for j in 0..p.len() {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + opt.eps);
            p[j] -= lr * (update + opt.weight_decay * p[j]);
        }
    });
    ckpt.step = step;
    Ok(loss)
}

/// Cyclic deterministic batching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
}

impl BatchPlan {
    pub fn batch(&self, samples: &[TrainSample], step: u64) -> Vec<TrainSample> {
        let n = samples.len();
        (0..self.batch_size.min(n))
            .map(|j| samples[(step as usize * self.batch_size + j) % n].clone())
            .collect::<Vec<_>>()
    }
}

/// Runs `steps` updates. `on_cadence` sees the checkpoint after every
/// `cadence`-th step (never when `cadence` is 0). Returns the per-step losses.
pub fn train_loop(
    ckpt: &mut Checkpoint,
    samples: &[TrainSample],
    steps: u64,
    batches: BatchPlan,
    opt: &OptimConfig,
    cadence: u64,
    mut on_cadence: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Vec<f64>> {
    if samples.is_empty() || batches.batch_size == 0 {
        return Err(Error::Contract("training needs samples and a positive batch size".into()));
    }
    let mut losses = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let batch = batches.batch(samples, ckpt.step);
        losses.push(train_step(ckpt, &batch, opt)?);
        if cadence > 0 && ckpt.step.is_multiple_of(cadence) {
            on_cadence(ckpt)?;
        }
    }
    Ok(losses)
}
