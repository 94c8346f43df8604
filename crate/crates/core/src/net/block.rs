use serde::{Deserialize, Serialize};

use super::attention::{
    attention_backward, attention_forward, head_rms_norm, head_rms_norm_backward, AttnCache, Mat,
    Vector,
};
use crate::control::ControlScalar;
use crate::error::{Error, Result};

/// Frozen cross-attention projections of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    /// `model_dim × model_dim`
    pub wq: Mat,
    /// `model_dim × text_dim`
    pub wk: Mat,
    /// `model_dim × text_dim`
    pub wv: Mat,
    /// `model_dim × model_dim`
    pub wo: Mat,
    pub norm_q: Vector,
    pub norm_k: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Q,
    K,
    V,
    O,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Q, Target::K, Target::V, Target::O];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Q => "q",
            Target::K => "k",
            Target::V => "v",
            Target::O => "o",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(Target::Q),
            "k" => Ok(Target::K),
            "v" => Ok(Target::V),
            "o" => Ok(Target::O),
            _ => Err(Error::Config(format!("unknown projection target '{s}'"))),
        }
    }
}

impl BlockWeights {
    pub fn get(&self, t: Target) -> &Mat {
        match t {
            Target::Q => &self.wq,
            Target::K => &self.wk,
            Target::V => &self.wv,
            Target::O => &self.wo,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    /// `rank × in_dim`
    pub a: Mat,
    /// `out_dim × rank`
    pub b: Mat,
}

impl LoraPair {
    pub fn zeros_like(&self) -> Self {
        Self {
            a: Mat::zeros(self.a.nrows(), self.a.ncols()),
            b: Mat::zeros(self.b.nrows(), self.b.ncols()),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.b.iter().all(|&v| v == 0.0) || self.a.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraDelta {
    pub q: LoraPair,
    pub k: LoraPair,
    pub v: LoraPair,
    pub o: LoraPair,
    pub scale: f64,
}

impl LoraDelta {
    pub fn pair(&self, t: Target) -> &LoraPair {
        match t {
            Target::Q => &self.q,
            Target::K => &self.k,
            Target::V => &self.v,
            Target::O => &self.o,
        }
    }

    pub fn pair_mut(&mut self, t: Target) -> &mut LoraPair {
        match t {
            Target::Q => &mut self.q,
            Target::K => &mut self.k,
            Target::V => &mut self.v,
            Target::O => &mut self.o,
        }
    }

    /// `(α/r) · B · A`
    pub fn delta(&self, t: Target) -> Mat {
        let p = self.pair(t);
        (&p.b * &p.a) * self.scale
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            q: self.q.zeros_like(),
            k: self.k.zeros_like(),
            v: self.v.zeros_like(),
            o: self.o.zeros_like(),
            scale: self.scale,
        }
    }
}

/// `W + ΔW`; returns `W` unchanged (bit for bit) when the delta is zero.
pub fn merged_weight(w: &Mat, lora: Option<&LoraDelta>, t: Target) -> Mat {
    match lora {
        Some(l) if !l.pair(t).is_zero() => w + l.delta(t),
        _ => w.clone(),
    }
}

/// Scalar condition → MLP embedding → `n_tokens` key and value rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CondAdapter {
    /// `adapter_dim × 1`
    pub mlp0_w: Mat,
    pub mlp0_b: Vector,
    /// `adapter_dim × adapter_dim`
    pub mlp1_w: Mat,
    pub mlp1_b: Vector,
    /// `(n_tokens · model_dim) × adapter_dim`
    pub kproj_w: Mat,
    pub kproj_b: Vector,
    pub vproj_w: Mat,
    pub vproj_b: Vector,
    pub n_tokens: usize,
    pub gate: f64,
}

impl CondAdapter {
    pub fn adapter_dim(&self) -> usize {
        self.mlp1_w.nrows()
    }

    pub fn token_dim(&self) -> usize {
        self.kproj_w.nrows() / self.n_tokens
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.nrows(), m.ncols());
        let zv = |v: &Vector| Vector::zeros(v.len());
        Self {
            mlp0_w: z(&self.mlp0_w),
            mlp0_b: zv(&self.mlp0_b),
            mlp1_w: z(&self.mlp1_w),
            mlp1_b: zv(&self.mlp1_b),
            kproj_w: z(&self.kproj_w),
            kproj_b: zv(&self.kproj_b),
            vproj_w: z(&self.vproj_w),
            vproj_b: zv(&self.vproj_b),
            n_tokens: self.n_tokens,
            gate: 0.0,
        }
    }
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

#[inline]
fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

#[inline]
fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

/// `e = W1 · silu(w0 · c + b0) + b1`
pub fn embed_condition(c: ControlScalar, adapter: &CondAdapter) -> Vector {
    embed_parts(c.value(), adapter).2
}

fn embed_parts(c: f64, ad: &CondAdapter) -> (Vector, Vector, Vector) {
    let pre = ad.mlp0_w.column(0) * c + &ad.mlp0_b;
    let h = pre.map(silu);
    let e = &ad.mlp1_w * &h + &ad.mlp1_b;
    (pre, h, e)
}

/// Affine projections of `e` reshaped row-major to `n_tokens × model_dim`.
pub fn adapter_kv(e: &Vector, adapter: &CondAdapter) -> Result<(Mat, Mat)> {
    if e.len() != adapter.kproj_w.ncols() {
        return Err(Error::Contract(format!(
            "condition embedding has {} entries, adapter expects {}",
            e.len(),
            adapter.kproj_w.ncols()
        )));
    }
    let (n, d) = (adapter.n_tokens, adapter.token_dim());
    let k = &adapter.kproj_w * e + &adapter.kproj_b;
    let v = &adapter.vproj_w * e + &adapter.vproj_b;
    Ok((
        Mat::from_row_slice(n, d, k.as_slice()),
        Mat::from_row_slice(n, d, v.as_slice()),
    ))
}

fn flatten_rows(m: &Mat) -> Vector {
    Vector::from_iterator(m.len(), m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// Everything one block needs besides its inputs.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams<'a> {
    pub weights: &'a BlockWeights,
    pub lora: Option<&'a LoraDelta>,
    pub adapter: Option<&'a CondAdapter>,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
struct CondCache {
    pre: Vector,
    h: Vector,
    e: Vector,
    k: Mat,
    v: Mat,
    attn: AttnCache,
    y: Mat,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    x: Mat,
    c_text: Mat,
    c: f64,
    g: f64,
    w: [Mat; 4],
    q0: Mat,
    q: Mat,
    inv_q: Mat,
    k0: Mat,
    k: Mat,
    inv_k: Mat,
    v: Mat,
    attn: AttnCache,
    cond: Option<CondCache>,
    y: Mat,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockGrads {
    pub lora: Option<LoraDelta>,
    /// Gate gradient is carried in the `gate` field.
    pub adapter: Option<CondAdapter>,
}

fn check_block(p: &BlockParams<'_>, x: &Mat, c_text: &Mat) -> Result<()> {
    let w = p.weights;
    if x.ncols() != w.wq.ncols() || c_text.ncols() != w.wk.ncols() {
        return Err(Error::Contract(format!(
            "block expects x width {} and text width {}, got {} and {}",
            w.wq.ncols(),
            w.wk.ncols(),
            x.ncols(),
            c_text.ncols()
        )));
    }
    if let Some(ad) = p.adapter {
        if ad.kproj_w.nrows() != ad.n_tokens * w.wq.nrows() {
            return Err(Error::Contract("adapter token width differs from model width".into()));
        }
    }
    Ok(())
}

/// One jointly trained cross-attention block:
/// `x + (Attn(q, K_text, V_text) + g · Attn(q, K_cond, V_cond)) · W_o'ᵀ`.
pub fn block_forward(p: &BlockParams<'_>, x: &Mat, c_text: &Mat, c: ControlScalar, g: f64) -> Result<Mat> {
    Ok(block_forward_cached(p, x, c_text, c.value(), g)?.0)
}

pub(crate) fn block_forward_cached(
    p: &BlockParams<'_>,
    x: &Mat,
    c_text: &Mat,
    c: f64,
    g: f64,
) -> Result<(Mat, BlockCache)> {
    check_block(p, x, c_text)?;
    let w = Target::ALL.map(|t| merged_weight(p.weights.get(t), p.lora, t));
    let [wq, wk, wv, wo] = &w;
    let q0 = x * wq.transpose();
    let (q, inv_q) = head_rms_norm(&q0, &p.weights.norm_q, p.n_heads);
    let k0 = c_text * wk.transpose();
    let (k, inv_k) = head_rms_norm(&k0, &p.weights.norm_k, p.n_heads);
    let v = c_text * wv.transpose();
    let (y_text, attn) = attention_forward(&q, &k, &v, p.n_heads)?;
    let mut y = y_text;
    let cond = match p.adapter {
        Some(ad) => {
            let (pre, h, e) = embed_parts(c, ad);
            let (kc, vc) = adapter_kv(&e, ad)?;
            let (yc, attn_c) = attention_forward(&q, &kc, &vc, p.n_heads)?;
            y += &yc * g;
            Some(CondCache {
                pre,
                h,
                e,
                k: kc,
                v: vc,
                attn: attn_c,
                y: yc,
            })
        }
        None => None,
    };
    let out = x + &y * wo.transpose();
    let cache = BlockCache {
        x: x.clone(),
        c_text: c_text.clone(),
        c,
        g,
        w,
        q0,
        q,
        inv_q,
        k0,
        k,
        inv_k,
        v,
        attn,
        cond,
        y,
    };
    Ok((out, cache))
}

fn lora_grad(pair: &LoraPair, scale: f64, dw: &Mat) -> LoraPair {
    LoraPair {
        a: (pair.b.transpose() * dw) * scale,
        b: (dw * pair.a.transpose()) * scale,
    }
}

/// Returns `dL/dx` and gradients of the trainable parameters given `dL/dx_out`.
pub(crate) fn block_backward(p: &BlockParams<'_>, cache: &BlockCache, dout: &Mat) -> (Mat, BlockGrads) {
    let [wq, _, _, wo] = &cache.w;
    let mut dx = dout.clone();
    let dy = dout * wo;
    let dwo = dout.transpose() * &cache.y;

    let (mut dq, dk, dv) = attention_backward(&cache.q, &cache.k, &cache.v, &cache.attn, &dy);

    let adapter_grads = p.adapter.zip(cache.cond.as_ref()).map(|(ad, cc)| {
        let dyc = &dy * cache.g;
        let (dq_c, dkc, dvc) = attention_backward(&cache.q, &cc.k, &cc.v, &cc.attn, &dyc);
        dq += dq_c;
        let (dk_flat, dv_flat) = (flatten_rows(&dkc), flatten_rows(&dvc));
        let de = ad.kproj_w.transpose() * &dk_flat + ad.vproj_w.transpose() * &dv_flat;
        let dh = ad.mlp1_w.transpose() * &de;
        let dpre = dh.zip_map(&cc.pre, |d, a| d * silu_grad(a));
        CondAdapter {
            mlp0_w: Mat::from_column_slice(dpre.len(), 1, (&dpre * cache.c).as_slice()),
            mlp0_b: dpre.clone(),
            mlp1_w: &de * cc.h.transpose(),
            mlp1_b: de,
            kproj_w: &dk_flat * cc.e.transpose(),
            kproj_b: dk_flat,
            vproj_w: &dv_flat * cc.e.transpose(),
            vproj_b: dv_flat,
            n_tokens: ad.n_tokens,
            gate: dy.component_mul(&cc.y).sum(),
        }
    });

    let dq0 = head_rms_norm_backward(&cache.q0, &p.weights.norm_q, &cache.inv_q, &dq);
    let dk0 = head_rms_norm_backward(&cache.k0, &p.weights.norm_k, &cache.inv_k, &dk);
    dx += &dq0 * wq;

    let lora_grads = p.lora.map(|l| {
        let dwq = dq0.transpose() * &cache.x;
        let dwk = dk0.transpose() * &cache.c_text;
        let dwv = dv.transpose() * &cache.c_text;
        LoraDelta {
            q: lora_grad(&l.q, l.scale, &dwq),
            k: lora_grad(&l.k, l.scale, &dwk),
            v: lora_grad(&l.v, l.scale, &dwv),
            o: lora_grad(&l.o, l.scale, &dwo),
            scale: l.scale,
        }
    });

    (
        dx,
        BlockGrads {
            lora: lora_grads,
            adapter: adapter_grads,
        },
    )
}
