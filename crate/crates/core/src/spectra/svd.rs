use crate::error::{Error, Result};
use crate::net::{Mat, Vector};

/// Thin SVD `W ≈ U · diag(S) · Vᵀ` with `k = min(m, n)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Mat,
    pub s: Vector,
    pub v: Mat,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Mat {
        &self.u * Mat::from_diagonal(&self.s) * self.v.transpose()
    }
}

const MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD.
///
/// Columns of `U` are sign-normalised so their largest-magnitude entry is
/// positive; ties go to the lowest row index.
pub fn svd(w: &Mat) -> Result<SvdResult> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("svd input has non-finite entries".into()));
    }
    if w.nrows() < w.ncols() {
        let t = svd(&w.transpose())?;
        let mut r = SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        };
        fix_signs(&mut r);
        return Ok(r);
    }
    let (m, n) = (w.nrows(), w.ncols());
    let mut a = w.clone();
    let mut v = Mat::identity(n, n);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (ap, aq) = (a[(i, p)], a[(i, q)]);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (ap, aq) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * ap - s * aq;
                    a[(i, q)] = s * ap + c * aq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "jacobi svd of a {m}x{n} matrix did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let tiny = scale * 1e-14 * (m.max(n) as f64);

    let mut u = Mat::zeros(m, n);
    let mut s = Vector::zeros(n);
    let mut vs = Mat::zeros(n, n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        vs.set_column(k, &v.column(j));
        if norms[j] > tiny && norms[j] > 0.0 {
            s[k] = norms[j];
            u.set_column(k, &(a.column(j) / norms[j]));
        } else {
            missing.push(k);
        }
    }
    complete_basis(&mut u, &missing);
    let mut r = SvdResult { u, s, v: vs };
    fix_signs(&mut r);
    Ok(r)
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_basis(u: &mut Mat, missing: &[usize]) {
    let m = u.nrows();
    let mut filled: Vec<usize> = (0..u.ncols()).filter(|c| !missing.contains(c)).collect();
    let mut candidate = 0;
    for &k in missing {
        while candidate < m {
            let mut e = Vector::zeros(m);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let col = u.column(j).into_owned();
                    let d = col.dot(&e);
                    e -= col * d;
                }
            }
            let nrm = e.norm();
            if nrm > 1e-8 {
                u.set_column(k, &(e / nrm));
                filled.push(k);
                break;
            }
        }
    }
}

fn fix_signs(r: &mut SvdResult) {
    for k in 0..r.u.ncols() {
        let col = r.u.column(k);
        let mut best = 0;
        for i in 0..col.len() {
            if col[i].abs() > col[best].abs() + 1e-12 {
                best = i;
            }
        }
        if col[best] < 0.0 {
            r.u.column_mut(k).neg_mut();
            r.v.column_mut(k).neg_mut();
        }
    }
}
