//! Data-free spectral diagnostics: intruder dimensions and the principal
//! component showdown between text and conditional attention paths.

pub mod svd;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use svd::{svd, SvdResult};

use crate::control::ControlScalar;
use crate::error::{Error, Result};
use crate::net::attention::head_rms_norm;
use crate::net::{
    adapter_kv, embed_condition, merged_weight, scaled_attention, Checkpoint, CondAdapter, Mat,
    Target, Vector,
};

pub const DEFAULT_TOP_K: usize = 64;
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntruderReport {
    pub block: Option<usize>,
    pub target: Option<Target>,
    pub k: usize,
    pub epsilon: f64,
    pub n_intruders: usize,
    /// Max |cos| against the pre-trained basis, per top-k adapted vector.
    pub s_max: Vec<f64>,
}

/// Counts top-`k` left singular vectors of `w_lora` whose best |cosine| with
/// any left singular vector of `w_pre` is below `epsilon`.
pub fn intruder_count(w_pre: &Mat, w_lora: &Mat, k: usize, epsilon: f64) -> Result<IntruderReport> {
    if w_pre.shape() != w_lora.shape() {
        return Err(Error::Contract(format!(
            "weight shapes differ: {:?} vs {:?}",
            w_pre.shape(),
            w_lora.shape()
        )));
    }
    let kmax = w_pre.nrows().min(w_pre.ncols());
    if k == 0 || k > kmax {
        return Err(Error::Domain(format!("k = {k} must lie in [1, {kmax}]")));
    }
    let u_pre = svd(w_pre)?.u;
    let u_lora = svd(w_lora)?.u;
    let sims = u_lora.columns(0, k).transpose() * &u_pre;
    let s_max: Vec<f64> = sims
        .row_iter()
        .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())).min(1.0))
        .collect();
    Ok(IntruderReport {
        block: None,
        target: None,
        k,
        epsilon,
        n_intruders: s_max.iter().filter(|&&s| s < epsilon).count(),
        s_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMethod {
    #[default]
    Threshold,
    Entropy,
}

/// Threshold: count of `σᵢ/σ₀ > τ`. Entropy: `exp(−Σ pᵢ ln pᵢ)`, `pᵢ = σᵢ/Σσ`.
pub fn effective_rank(s: &[f64], method: RankMethod, tau: f64) -> Result<f64> {
    let s0 = s.first().copied().unwrap_or(0.0);
    if !(s0 > 0.0) {
        return Err(Error::Domain("effective rank of an all-zero spectrum".into()));
    }
    Ok(match method {
        RankMethod::Threshold => s.iter().filter(|&&x| x / s0 > tau).count() as f64,
        RankMethod::Entropy => {
            let total: f64 = s.iter().sum();
            let h: f64 = s
                .iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| {
                    let p = x / total;
                    -p * p.ln()
                })
                .sum();
            h.exp()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShowdownConfig {
    pub c_strong: f64,
    /// Number of principal test vectors; clamped to the available dimension.
    pub n: usize,
    pub tau: f64,
}

impl Default for ShowdownConfig {
    fn default() -> Self {
        Self {
            c_strong: 1.0,
            n: 64,
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub block: Option<usize>,
    pub c: f64,
    pub s_text: Vec<f64>,
    pub s_cond: Vec<f64>,
    pub r_text: f64,
    pub r_cond: f64,
    pub r_text_entropy: f64,
    pub r_cond_entropy: f64,
}

fn normalized(s: &Vector) -> Vec<f64> {
    let s0 = s[0];
    if s0 > 0.0 {
        s.iter().map(|x| x / s0).collect()
    } else {
        vec![0.0; s.len()]
    }
}

fn ranks(s: &Vector, tau: f64) -> Result<(f64, f64)> {
    if s.is_empty() || s[0] <= 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((
        effective_rank(s.as_slice(), RankMethod::Threshold, tau)?,
        effective_rank(s.as_slice(), RankMethod::Entropy, tau)?,
    ))
}

/// Merged projections and norm gains of one block.
#[derive(Debug, Clone)]
pub struct ShowdownWeights<'a> {
    pub wq: &'a Mat,
    pub wk: &'a Mat,
    pub wv: &'a Mat,
    pub norm_q: &'a Vector,
    pub norm_k: &'a Vector,
}

/// Probes both attention paths with the projections' own principal output
/// directions and compares the spectra of the responses.
///
/// Test vectors are the top-N left singular vectors of `W_q'`, `W_k'` and
/// `W_v'` (rows of an `N × model_dim` matrix). Queries and keys go through
/// the block's RMS norm. Attention is single-head.
pub fn principal_showdown(
    w: &ShowdownWeights<'_>,
    adapter: &CondAdapter,
    cfg: &ShowdownConfig,
) -> Result<SpectrumReport> {
    let d = w.wq.nrows();
    let n = cfg.n.min(d).min(w.wk.ncols()).min(w.wv.ncols()).min(w.wq.ncols());
    if n == 0 {
        return Err(Error::Domain("showdown needs at least one test vector".into()));
    }
    let top = |m: &Mat| -> Result<Mat> { Ok(svd(m)?.u.columns(0, n).transpose()) };
    let (q_test, k_test, v_test) = (top(w.wq)?, top(w.wk)?, top(w.wv)?);
    let q = head_rms_norm(&q_test, w.norm_q, 1).0;
    let k = head_rms_norm(&k_test, w.norm_k, 1).0;
    let y_text = scaled_attention(&q, &k, &v_test, 1)?;

    let c = ControlScalar::new(cfg.c_strong)?;
    let (kc, vc) = adapter_kv(&embed_condition(c, adapter), adapter)?;
    let y_cond = scaled_attention(&q, &kc, &vc, 1)?;

    let (st, sc) = (svd(&y_text)?.s, svd(&y_cond)?.s);
    let (r_text, r_text_entropy) = ranks(&st, cfg.tau)?;
    let (r_cond, r_cond_entropy) = ranks(&sc, cfg.tau)?;
    Ok(SpectrumReport {
        block: None,
        c: cfg.c_strong,
        s_text: normalized(&st),
        s_cond: normalized(&sc),
        r_text,
        r_cond,
        r_text_entropy,
        r_cond_entropy,
    })
}

/// Showdown on one adapter block of a checkpoint, with merged (joint) weights.
pub fn checkpoint_showdown(ckpt: &Checkpoint, block: usize, cfg: &ShowdownConfig) -> Result<SpectrumReport> {
    let adapter = ckpt
        .params
        .adapters
        .get(&block)
        .ok_or_else(|| Error::Contract(format!("block {block} has no adapter")))?;
    let b = &ckpt.blocks[block];
    let lora = Some(&ckpt.params.lora[block]);
    let (wq, wk, wv) = (
        merged_weight(&b.wq, lora, Target::Q),
        merged_weight(&b.wk, lora, Target::K),
        merged_weight(&b.wv, lora, Target::V),
    );
    let mut r = principal_showdown(
        &ShowdownWeights {
            wq: &wq,
            wk: &wk,
            wv: &wv,
            norm_q: &b.norm_q,
            norm_k: &b.norm_k,
        },
        adapter,
        cfg,
    )?;
    r.block = Some(block);
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweep {
    pub n_blocks: usize,
    pub targets: Vec<Target>,
    /// Row-major over (block, target).
    pub reports: Vec<IntruderReport>,
}

impl DepthSweep {
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.n_blocks, self.targets.len())
    }

    pub fn count_grid(&self) -> Vec<Vec<usize>> {
        self.reports
            .chunks(self.targets.len())
            .map(|row| row.iter().map(|r| r.n_intruders).collect())
            .collect()
    }

    pub fn per_block(&self) -> Vec<usize> {
        self.count_grid().iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> usize {
        self.reports.iter().map(|r| r.n_intruders).sum()
    }

    /// `block,target,vector_rank,s_max,is_intruder`
    pub fn write_heatmap_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "block,target,vector_rank,s_max,is_intruder")?;
        for r in &self.reports {
            for (j, s) in r.s_max.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    r.block.unwrap_or(0),
                    r.target.map_or("", |t| t.as_str()),
                    j,
                    s,
                    u8::from(*s < r.epsilon)
                )?;
            }
        }
        Ok(())
    }
}

fn same_architecture(a: &Checkpoint, b: &Checkpoint) -> Result<()> {
    let (x, y) = (&a.config, &b.config);
    if (x.n_blocks, x.model_dim, x.text_dim) != (y.n_blocks, y.model_dim, y.text_dim) {
        return Err(Error::Contract(format!(
            "architectures differ: {}x{}x{} vs {}x{}x{}",
            x.n_blocks, x.model_dim, x.text_dim, y.n_blocks, y.model_dim, y.text_dim
        )));
    }
    Ok(())
}

/// Intruder reports for every (block, target) between merged weights of two
/// checkpoints.
pub fn depth_sweep(pre: &Checkpoint, post: &Checkpoint, targets: &[Target], k: usize, epsilon: f64) -> Result<DepthSweep> {
    same_architecture(pre, post)?;
    let mut reports = Vec::with_capacity(pre.blocks.len() * targets.len());
    for i in 0..pre.blocks.len() {
        for &t in targets {
            let a = merged_weight(pre.blocks[i].get(t), Some(&pre.params.lora[i]), t);
            let b = merged_weight(post.blocks[i].get(t), Some(&post.params.lora[i]), t);
            let kk = k.min(a.nrows().min(a.ncols()));
            let mut r = intruder_count(&a, &b, kk, epsilon)?;
            r.block = Some(i);
            r.target = Some(t);
            reports.push(r);
        }
    }
    Ok(DepthSweep {
        n_blocks: pre.blocks.len(),
        targets: targets.to_vec(),
        reports,
    })
}

/// `kind,index,sigma_normalized`
pub fn write_spectrum_csv<W: Write>(report: &SpectrumReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "kind,index,sigma_normalized")?;
    for (kind, s) in [("text", &report.s_text), ("cond", &report.s_cond)] {
        for (i, v) in s.iter().enumerate() {
            writeln!(w, "{kind},{i},{v}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraSummary {
    pub k: usize,
    pub epsilon: f64,
    pub tau: f64,
    pub intruders_per_block: Vec<usize>,
    pub total_intruders: usize,
    pub showdown: Vec<SpectrumReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random(seed: u64, m: usize, n: usize) -> Mat {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identical_weights_have_no_intruders() {
        let w = random(1, 12, 12);
        let r = intruder_count(&w, &w, 12, 0.5).unwrap();
        assert_eq!(r.n_intruders, 0);
        assert!(r.s_max.iter().all(|&s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn injected_orthogonal_direction_is_caught() {
        // Tall base: its left singular vectors span only 4 of 20 dimensions.
        let w_pre = random(2, 20, 4);
        let pre = svd(&w_pre).unwrap();
        let mut x = random(4, 20, 1).column(0).into_owned();
        for _ in 0..2 {
            for j in 0..4 {
                let c = pre.u.column(j).into_owned();
                x -= &c * c.dot(&x);
            }
        }
        x /= x.norm();
        let y = random(5, 4, 1).column(0).normalize();
        let w_lora = &w_pre + (&x * y.transpose()) * (10.0 * pre.s[0]);
        let top = svd(&w_lora).unwrap().u.column(0).into_owned();
        let brute = (0..4).map(|j| pre.u.column(j).dot(&top).abs()).fold(0.0, f64::max);
        assert!(brute < 0.5);
        assert!(top.dot(&x).abs() > 0.9);
        let r = intruder_count(&w_pre, &w_lora, 1, 0.5).unwrap();
        assert!((r.s_max[0] - brute).abs() < 1e-9);
        assert_eq!(r.n_intruders, 1);
    }

    #[test]
    fn rejects_bad_k() {
        let w = random(1, 4, 3);
        assert!(intruder_count(&w, &w, 4, 0.5).is_err());
        assert!(intruder_count(&w, &w, 0, 0.5).is_err());
        assert!(intruder_count(&w, &random(1, 3, 4), 1, 0.5).is_err());
    }

    #[test]
    fn effective_rank_examples() {
        for m in [RankMethod::Threshold, RankMethod::Entropy] {
            assert_eq!(effective_rank(&[5.0, 0.0, 0.0], m, 0.1).unwrap(), 1.0);
        }
        assert!((effective_rank(&[1.0; 4], RankMethod::Entropy, 0.1).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(effective_rank(&[1.0, 0.5, 0.05, 0.01], RankMethod::Threshold, 0.1).unwrap(), 2.0);
        assert!(effective_rank(&[0.0, 0.0], RankMethod::Threshold, 0.1).is_err());
    }

    #[test]
    fn rank_one_value_projector_gives_rank_one() {
        let cfg = ModelConfig::default();
        let ck = Checkpoint::init(cfg, 1).unwrap();
        let mut ad = ck.params.adapters[&8].clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let row = Vector::from_fn(ad.vproj_w.ncols(), |_, _| rng.random_range(-1.0..1.0));
        // Each token carries a multiple of the same value row.
        let tok = Vector::from_fn(64, |_, _| rng.random_range(-1.0..1.0));
        let coef = [1.0, -0.5, 2.0, 0.25];
        ad.vproj_w = Mat::from_fn(256, 256, |r, c| coef[r / 64] * tok[r % 64] * row[c]);
        let b = &ck.blocks[8];
        let r = principal_showdown(
            &ShowdownWeights {
                wq: &b.wq,
                wk: &b.wk,
                wv: &b.wv,
                norm_q: &b.norm_q,
                norm_k: &b.norm_k,
            },
            &ad,
            &ShowdownConfig::default(),
        )
        .unwrap();
        assert_eq!(r.r_cond, 1.0);
        assert!(r.r_text > 4.0);
        assert_eq!(r.s_text[0], 1.0);
        assert!(r.s_text.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn single_test_vector() {
        let ck = Checkpoint::init(ModelConfig::tiny(), 1).unwrap();
        let mut ck = ck;
        let i = ck.config.adapter_blocks[0];
        ck.params.adapters.get_mut(&i).unwrap().vproj_b.fill(0.3);
        let r = checkpoint_showdown(&ck, i, &ShowdownConfig { n: 1, ..ShowdownConfig::default() }).unwrap();
        assert_eq!(r.s_text.len(), 1);
        assert_eq!(r.s_text[0], 1.0);
        assert_eq!(r.s_cond[0], 1.0);
    }

    #[test]
    fn untrained_sweep_is_all_zero() {
        let ck = Checkpoint::init(ModelConfig::default(), 1).unwrap();
        let s = depth_sweep(&ck.pristine(), &ck, &Target::ALL, 64, 0.5).unwrap();
        assert_eq!(s.grid_shape(), (12, 4));
        assert_eq!(s.total(), 0);
        let mut buf = Vec::new();
        s.write_heatmap_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12 * 4 * 64);
        let other = Checkpoint::init(ModelConfig::tiny(), 1).unwrap();
        assert!(depth_sweep(&ck, &other, &Target::ALL, 4, 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn positive_scaling_invariance(seed in 0u64..10_000, a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let w_pre = random(seed, 8, 8);
            let w_lora = &w_pre + random(seed + 1, 8, 8) * 0.3;
            let r0 = intruder_count(&w_pre, &w_lora, 8, 0.5).unwrap();
            let r1 = intruder_count(&(&w_pre * a), &(&w_lora * b), 8, 0.5).unwrap();
            prop_assert_eq!(r0.n_intruders, r1.n_intruders);
            let r2 = intruder_count(&w_pre, &(&w_pre * a), 8, 0.5).unwrap();
            prop_assert_eq!(r2.n_intruders, 0);
        }
    }

    #[test]
    fn small_in_span_update_has_no_intruders() {
        let w_pre = random(11, 8, 8);
        let u = svd(&w_pre).unwrap();
        // ΔW = U_top · small · V_topᵀ leaves singular vectors nearly unchanged.
        let mut s = Vector::zeros(8);
        s[0] = 1e-3 * u.s[0];
        let dw = &u.u * Mat::from_diagonal(&s) * u.v.transpose();
        let r = intruder_count(&w_pre, &(&w_pre + dw), 8, 0.5).unwrap();
        assert_eq!(r.n_intruders, 0);
    }
}
