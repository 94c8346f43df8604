use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(s: &Mat) -> Mat {
    let mut p = s.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Per-head attention probabilities, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttnCache {
    pub probs: Vec<Mat>,
}

fn check_shapes(q: &Mat, k: &Mat, v: &Mat, n_heads: usize) -> Result<usize> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() || v.ncols() != q.ncols() {
        return Err(Error::Contract(format!(
            "attention shapes q {}x{}, k {}x{}, v {}x{} disagree",
            q.nrows(),
            q.ncols(),
            k.nrows(),
            k.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    if n_heads == 0 || !q.ncols().is_multiple_of(n_heads) {
        return Err(Error::Contract(format!(
            "width {} not divisible into {n_heads} heads",
            q.ncols()
        )));
    }
    if k.nrows() == 0 {
        return Err(Error::Contract("attention over zero keys".into()));
    }
    Ok(q.ncols() / n_heads)
}

/// `softmax(q Kᵀ / √d_head) V`, independently per head.
pub fn scaled_attention(q: &Mat, k: &Mat, v: &Mat, n_heads: usize) -> Result<Mat> {
    Ok(attention_forward(q, k, v, n_heads)?.0)
}

pub(crate) fn attention_forward(q: &Mat, k: &Mat, v: &Mat, n_heads: usize) -> Result<(Mat, AttnCache)> {
    let dh = check_shapes(q, k, v, n_heads)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Mat::zeros(q.nrows(), q.ncols());
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = (q.columns(h * dh, dh), k.columns(h * dh, dh), v.columns(h * dh, dh));
        let p = softmax_rows(&((qh * kh.transpose()) * scale));
        out.columns_mut(h * dh, dh).copy_from(&(&p * vh));
        probs.push(p);
    }
    Ok((out, AttnCache { probs }))
}

pub(crate) fn attention_backward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    cache: &AttnCache,
    dout: &Mat,
) -> (Mat, Mat, Mat) {
    let n_heads = cache.probs.len();
    let dh = q.ncols() / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (mut dq, mut dk, mut dv) = (
        Mat::zeros(q.nrows(), q.ncols()),
        Mat::zeros(k.nrows(), k.ncols()),
        Mat::zeros(v.nrows(), v.ncols()),
    );
    for (h, p) in cache.probs.iter().enumerate() {
        let (qh, kh, vh) = (q.columns(h * dh, dh), k.columns(h * dh, dh), v.columns(h * dh, dh));
        let doh = dout.columns(h * dh, dh);
        dv.columns_mut(h * dh, dh).copy_from(&(p.transpose() * doh));
        let dp = doh * vh.transpose();
        let mut ds = p.component_mul(&dp);
        for (mut row, prow) in ds.row_iter_mut().zip(p.row_iter()) {
            let s = row.sum();
            row -= prow * s;
        }
        dq.columns_mut(h * dh, dh).copy_from(&((&ds * kh) * scale));
        dk.columns_mut(h * dh, dh).copy_from(&((ds.transpose() * qh) * scale));
    }
    (dq, dk, dv)
}

pub const NORM_EPS: f64 = 1e-6;

/// RMS normalisation over each head's slice of every row, with per-channel gain.
/// Returns the output and the per-(row, head) inverse RMS.
pub fn head_rms_norm(z: &Mat, gain: &Vector, n_heads: usize) -> (Mat, Mat) {
    let dh = z.ncols() / n_heads;
    let mut out = z.clone();
    let mut inv = Mat::zeros(z.nrows(), n_heads);
    for r in 0..z.nrows() {
        for h in 0..n_heads {
            let ms = (0..dh).map(|j| z[(r, h * dh + j)].powi(2)).sum::<f64>() / dh as f64;
            let s = 1.0 / (ms + NORM_EPS).sqrt();
            inv[(r, h)] = s;
            for j in 0..dh {
                let c = h * dh + j;
                out[(r, c)] = z[(r, c)] * s * gain[c];
            }
        }
    }
    (out, inv)
}

pub(crate) fn head_rms_norm_backward(z: &Mat, gain: &Vector, inv: &Mat, dout: &Mat) -> Mat {
    let n_heads = inv.ncols();
    let dh = z.ncols() / n_heads;
    let mut dz = Mat::zeros(z.nrows(), z.ncols());
    for r in 0..z.nrows() {
        for h in 0..n_heads {
            let s = inv[(r, h)];
            let mut dot = 0.0;
            for j in 0..dh {
                let c = h * dh + j;
                dot += dout[(r, c)] * gain[c] * z[(r, c)] * s;
            }
            dot /= dh as f64;
            for j in 0..dh {
                let c = h * dh + j;
                let u = z[(r, c)] * s;
                dz[(r, c)] = s * (dout[(r, c)] * gain[c] - u * dot);
            }
        }
    }
    dz
}
