use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::attention::{Mat, Vector};
use super::block::{block_forward, BlockParams, BlockWeights, CondAdapter, LoraDelta, LoraPair, Target};
use super::config::ModelConfig;
use crate::control::ControlScalar;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor_file::{Tensor, TensorFile};

pub const CHECKPOINT_FORMAT: &str = "camforge-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Every block keeps its LoRA delta.
    #[default]
    Joint,
    /// LoRA deltas only in adapter blocks.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Lora,
    Adapter,
    Gate,
}

/// Trainable state: LoRA deltas for every block plus adapters for the deep ones.
/// Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub lora: Vec<LoraDelta>,
    pub adapters: BTreeMap<usize, CondAdapter>,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Self {
            lora: self.lora.iter().map(LoraDelta::zeros_like).collect(),
            adapters: self.adapters.iter().map(|(&i, a)| (i, a.zeros_like())).collect(),
        }
    }

    /// Visits every trainable tensor in name order-independent but fixed order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, ParamKind, &mut [f64])) {
        for (i, l) in self.lora.iter_mut().enumerate() {
            for t in Target::ALL {
                let p = l.pair_mut(t);
                f(&format!("lora.{i}.{}.A", t.as_str()), ParamKind::Lora, p.a.as_mut_slice());
                f(&format!("lora.{i}.{}.B", t.as_str()), ParamKind::Lora, p.b.as_mut_slice());
            }
        }
        for (i, a) in self.adapters.iter_mut() {
            let pre = format!("adapter.{i}");
            f(&format!("{pre}.mlp0.w"), ParamKind::Adapter, a.mlp0_w.as_mut_slice());
            f(&format!("{pre}.mlp0.b"), ParamKind::Adapter, a.mlp0_b.as_mut_slice());
            f(&format!("{pre}.mlp1.w"), ParamKind::Adapter, a.mlp1_w.as_mut_slice());
            f(&format!("{pre}.mlp1.b"), ParamKind::Adapter, a.mlp1_b.as_mut_slice());
            f(&format!("{pre}.kproj.w"), ParamKind::Adapter, a.kproj_w.as_mut_slice());
            f(&format!("{pre}.kproj.b"), ParamKind::Adapter, a.kproj_b.as_mut_slice());
            f(&format!("{pre}.vproj.w"), ParamKind::Adapter, a.vproj_w.as_mut_slice());
            f(&format!("{pre}.vproj.b"), ParamKind::Adapter, a.vproj_b.as_mut_slice());
            f(&format!("{pre}.gate"), ParamKind::Gate, std::slice::from_mut(&mut a.gate));
        }
    }

    pub fn to_flat(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        self.clone().for_each_mut(|name, _, v| {
            out.insert(name.to_string(), v.to_vec());
        });
        out
    }
}

/// First and second moments keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Frozen originals; never written by training.
    pub blocks: Vec<BlockWeights>,
    pub params: Params,
    pub optim: AdamState,
    pub step: u64,
}

fn f32_round(m: &mut [f64]) {
    for v in m {
        *v = *v as f32 as f64;
    }
}

fn gaussian(rng: &mut impl Rng, r: usize, c: usize, std: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Random orthogonal factors with a decaying power-law spectrum, RMS singular
/// value `gain`. Stands in for a pretrained projection.
fn spectral_matrix(rng: &mut impl Rng, rows: usize, cols: usize, gain: f64) -> Mat {
    let k = rows.min(cols);
    let u = gaussian(rng, rows, k, 1.0).qr().q();
    let v = gaussian(rng, cols, k, 1.0).qr().q();
    let raw: Vec<f64> = (0..k).map(|i| (i as f64 + 1.0).powf(-0.5)).collect();
    let rms = (raw.iter().map(|s| s * s).sum::<f64>() / k as f64).sqrt();
    let s = Vector::from_iterator(k, raw.iter().map(|x| gain * x / rms));
    let mut m = u * Mat::from_diagonal(&s) * v.transpose();
    f32_round(m.as_mut_slice());
    m
}

fn backbone_block(cfg: &ModelConfig, i: usize) -> BlockWeights {
    let mut rng = rng::stream(cfg.seed, &[0xbac, i as u64]);
    let (d, dt) = (cfg.model_dim, cfg.text_dim);
    let mut gain = |n: usize| {
        let mut g = Vector::from_fn(n, |_, _| 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal));
        f32_round(g.as_mut_slice());
        g
    };
    let (norm_q, norm_k) = (gain(d), gain(d));
    BlockWeights {
        wq: spectral_matrix(&mut rng, d, d, 1.0),
        wk: spectral_matrix(&mut rng, d, dt, 1.0),
        wv: spectral_matrix(&mut rng, d, dt, 1.0),
        wo: spectral_matrix(&mut rng, d, d, 1.0 / (cfg.n_blocks as f64).sqrt()),
        norm_q,
        norm_k,
    }
}

fn init_lora(cfg: &ModelConfig, seed: u64, i: usize) -> LoraDelta {
    let mut rng = rng::stream(seed, &[0x10a, i as u64]);
    let (d, dt, r) = (cfg.model_dim, cfg.text_dim, cfg.lora_rank);
    let mut pair = |out: usize, inp: usize| {
        let mut a = gaussian(&mut rng, r, inp, 1.0 / (inp as f64).sqrt());
        f32_round(a.as_mut_slice());
        LoraPair { a, b: Mat::zeros(out, r) }
    };
    LoraDelta {
        q: pair(d, d),
        k: pair(d, dt),
        v: pair(d, dt),
        o: pair(d, d),
        scale: cfg.lora_scale(),
    }
}

fn init_adapter(cfg: &ModelConfig, seed: u64, i: usize) -> CondAdapter {
    let mut rng = rng::stream(seed, &[0xada, i as u64]);
    let (ad, nd) = (cfg.adapter_dim, cfg.n_cond_tokens * cfg.model_dim);
    let inv = 1.0 / (ad as f64).sqrt();
    let round = |mut m: Mat| {
        f32_round(m.as_mut_slice());
        m
    };
    let mlp0_w = round(gaussian(&mut rng, ad, 1, 1.0));
    let mlp0_b = round(gaussian(&mut rng, ad, 1, 0.5)).column(0).into_owned();
    let mlp1_w = round(gaussian(&mut rng, ad, ad, inv));
    let kproj_w = round(gaussian(&mut rng, nd, ad, inv));
    CondAdapter {
        mlp0_w,
        mlp0_b,
        mlp1_w,
        mlp1_b: Vector::zeros(ad),
        kproj_w,
        kproj_b: Vector::zeros(nd),
        vproj_w: Mat::zeros(nd, ad),
        vproj_b: Vector::zeros(nd),
        n_tokens: cfg.n_cond_tokens,
        gate: cfg.gate,
    }
}

impl Checkpoint {
    /// Backbone from `config.seed`; LoRA (B = 0) and adapters (zero value
    /// projector) from `init_seed`.
    pub fn init(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let blocks = (0..config.n_blocks).map(|i| backbone_block(&config, i)).collect();
        let lora = (0..config.n_blocks).map(|i| init_lora(&config, init_seed, i)).collect();
        let adapters = config
            .adapter_blocks
            .iter()
            .map(|&i| (i, init_adapter(&config, init_seed, i)))
            .collect();
        Ok(Self {
            config,
            blocks,
            params: Params { lora, adapters },
            optim: AdamState::default(),
            step: 0,
        })
    }

    /// Same backbone with no adaptation at all.
    pub fn pristine(&self) -> Self {
        let mut p = self.clone();
        for l in &mut p.params.lora {
            for t in Target::ALL {
                l.pair_mut(t).b.fill(0.0);
            }
        }
        p.params.adapters.clear();
        p.optim = AdamState::default();
        p.step = 0;
        p
    }

    pub fn block_params(&self, i: usize, mode: InferenceMode) -> BlockParams<'_> {
        let lora_on = match mode {
            InferenceMode::Joint => true,
            InferenceMode::Decoupled => self.config.is_adapter_block(i),
        };
        BlockParams {
            weights: &self.blocks[i],
            lora: lora_on.then(|| &self.params.lora[i]),
            adapter: self.params.adapters.get(&i),
            n_heads: self.config.n_heads,
        }
    }

    pub fn forward(&self, latent: &Mat, text: &Mat, c: ControlScalar, mode: InferenceMode) -> Result<Mat> {
        let mut x = latent.clone();
        for i in 0..self.blocks.len() {
            let p = self.block_params(i, mode);
            let g = p.adapter.map_or(0.0, |a| a.gate);
            x = block_forward(&p, &x, text, c, g)?;
        }
        Ok(x)
    }

    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let mut f = TensorFile::new();
        let mut put = |name: String, m: &Mat| -> Result<()> {
            let data: Vec<f64> = m.transpose().as_slice().to_vec();
            f.insert(name, Tensor::from_f64(vec![m.nrows(), m.ncols()], &data)?);
            Ok(())
        };
        for (i, b) in self.blocks.iter().enumerate() {
            for t in Target::ALL {
                put(format!("blocks.{i}.w{}", t.as_str()), b.get(t))?;
            }
        }
        for (i, l) in self.params.lora.iter().enumerate() {
            for t in Target::ALL {
                put(format!("lora.{i}.{}.A", t.as_str()), &l.pair(t).a)?;
                put(format!("lora.{i}.{}.B", t.as_str()), &l.pair(t).b)?;
            }
        }
        for (i, a) in &self.params.adapters {
            put(format!("adapter.{i}.mlp0.w"), &a.mlp0_w)?;
            put(format!("adapter.{i}.mlp1.w"), &a.mlp1_w)?;
            put(format!("adapter.{i}.kproj.w"), &a.kproj_w)?;
            put(format!("adapter.{i}.vproj.w"), &a.vproj_w)?;
        }
        let mut vecs: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            vecs.push((format!("blocks.{i}.norm_q"), b.norm_q.as_slice().to_vec()));
            vecs.push((format!("blocks.{i}.norm_k"), b.norm_k.as_slice().to_vec()));
        }
        for (i, a) in &self.params.adapters {
            vecs.push((format!("adapter.{i}.mlp0.b"), a.mlp0_b.as_slice().to_vec()));
            vecs.push((format!("adapter.{i}.mlp1.b"), a.mlp1_b.as_slice().to_vec()));
            vecs.push((format!("adapter.{i}.kproj.b"), a.kproj_b.as_slice().to_vec()));
            vecs.push((format!("adapter.{i}.vproj.b"), a.vproj_b.as_slice().to_vec()));
            vecs.push((format!("adapter.{i}.gate"), vec![a.gate]));
        }
        for (name, m) in &self.optim.m {
            vecs.push((format!("optim.m.{name}"), m.clone()));
        }
        for (name, v) in &self.optim.v {
            vecs.push((format!("optim.v.{name}"), v.clone()));
        }
        for (name, v) in vecs {
            f.insert(name, Tensor::from_f64(vec![v.len()], &v)?);
        }
        f.metadata.insert("format".into(), CHECKPOINT_FORMAT.into());
        f.metadata.insert(
            "config".into(),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        f.metadata.insert("step".into(), self.step.to_string());
        Ok(f)
    }

    pub fn from_tensor_file(f: &TensorFile, path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, m);
        let meta = |k: &str| f.metadata.get(k).ok_or_else(|| bad(format!("missing metadata '{k}'")));
        if meta("format")? != CHECKPOINT_FORMAT {
            return Err(bad(format!("not a {CHECKPOINT_FORMAT} file")));
        }
        let config: ModelConfig =
            serde_json::from_str(meta("config")?).map_err(|e| bad(format!("config: {e}")))?;
        config.validate()?;
        let step: u64 = meta("step")?.parse().map_err(|e| bad(format!("step: {e}")))?;
        let mat = |name: String, r: usize, c: usize| -> Result<Mat> {
            let t = f.tensors.get(&name).ok_or_else(|| bad(format!("missing tensor '{name}'")))?;
            if t.shape != [r, c] {
                return Err(bad(format!("tensor '{name}' has shape {:?}, expected [{r}, {c}]", t.shape)));
            }
            Ok(Mat::from_row_slice(r, c, &t.to_f64()))
        };
        let vec = |name: String, n: usize| -> Result<Vector> {
            let t = f.tensors.get(&name).ok_or_else(|| bad(format!("missing tensor '{name}'")))?;
            if t.shape != [n] {
                return Err(bad(format!("tensor '{name}' has shape {:?}, expected [{n}]", t.shape)));
            }
            Ok(Vector::from_vec(t.to_f64()))
        };
        let (d, dt, r) = (config.model_dim, config.text_dim, config.lora_rank);
        let in_dim = |t: Target| if matches!(t, Target::K | Target::V) { dt } else { d };
        let mut blocks = Vec::with_capacity(config.n_blocks);
        let mut lora = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            blocks.push(BlockWeights {
                wq: mat(format!("blocks.{i}.wq"), d, d)?,
                wk: mat(format!("blocks.{i}.wk"), d, dt)?,
                wv: mat(format!("blocks.{i}.wv"), d, dt)?,
                wo: mat(format!("blocks.{i}.wo"), d, d)?,
                norm_q: vec(format!("blocks.{i}.norm_q"), d)?,
                norm_k: vec(format!("blocks.{i}.norm_k"), d)?,
            });
            let pair = |t: Target| -> Result<LoraPair> {
                Ok(LoraPair {
                    a: mat(format!("lora.{i}.{}.A", t.as_str()), r, in_dim(t))?,
                    b: mat(format!("lora.{i}.{}.B", t.as_str()), d, r)?,
                })
            };
            lora.push(LoraDelta {
                q: pair(Target::Q)?,
                k: pair(Target::K)?,
                v: pair(Target::V)?,
                o: pair(Target::O)?,
                scale: config.lora_scale(),
            });
        }
        let (ad, nd) = (config.adapter_dim, config.n_cond_tokens * d);
        let mut adapters = BTreeMap::new();
        for &i in &config.adapter_blocks {
            if !f.tensors.contains_key(&format!("adapter.{i}.gate")) {
                continue;
            }
            adapters.insert(
                i,
                CondAdapter {
                    mlp0_w: mat(format!("adapter.{i}.mlp0.w"), ad, 1)?,
                    mlp0_b: vec(format!("adapter.{i}.mlp0.b"), ad)?,
                    mlp1_w: mat(format!("adapter.{i}.mlp1.w"), ad, ad)?,
                    mlp1_b: vec(format!("adapter.{i}.mlp1.b"), ad)?,
                    kproj_w: mat(format!("adapter.{i}.kproj.w"), nd, ad)?,
                    kproj_b: vec(format!("adapter.{i}.kproj.b"), nd)?,
                    vproj_w: mat(format!("adapter.{i}.vproj.w"), nd, ad)?,
                    vproj_b: vec(format!("adapter.{i}.vproj.b"), nd)?,
                    n_tokens: config.n_cond_tokens,
                    gate: vec(format!("adapter.{i}.gate"), 1)?[0],
                },
            );
        }
        let mut optim = AdamState::default();
        for (name, t) in &f.tensors {
            if let Some(rest) = name.strip_prefix("optim.m.") {
                optim.m.insert(rest.to_string(), t.to_f64());
            } else if let Some(rest) = name.strip_prefix("optim.v.") {
                optim.v.insert(rest.to_string(), t.to_f64());
            }
        }
        Ok(Self {
            config,
            blocks,
            params: Params { lora, adapters },
            optim,
            step,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_tensor_file()?.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?, path)
    }
}

pub fn model_forward(
    latent: &Mat,
    text_emb: &Mat,
    c: ControlScalar,
    checkpoint: &Checkpoint,
    mode: InferenceMode,
) -> Result<Mat> {
    checkpoint.forward(latent, text_emb, c, mode)
}

/// Zeroes the LoRA deltas of every block outside the adapter set, restoring
/// the original weights there. Adapter blocks are untouched.
pub fn surgery_prune(checkpoint: &Checkpoint) -> Checkpoint {
    let mut out = checkpoint.clone();
    for (i, l) in out.params.lora.iter_mut().enumerate() {
        if !checkpoint.config.is_adapter_block(i) {
            for t in Target::ALL {
                l.pair_mut(t).b.fill(0.0);
            }
        }
    }
    out
}
