use std::io::Write;

use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::net::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsfScore {
    pub score: f64,
    /// Rows skipped because either side had zero norm.
    pub excluded: usize,
}

fn check_compatible(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<()> {
    if a.provider != b.provider {
        return Err(Error::Contract(format!(
            "embedding providers differ: '{}' vs '{}'",
            a.provider, b.provider
        )));
    }
    if a.prompts != b.prompts {
        return Err(Error::Contract("embedding sets cover different prompt lists".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!("embedding dims differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()) {
        return a.iter().any(|&x| x != 0.0).then_some(1.0);
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    Some((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean per-prompt cosine similarity.
pub fn ssf_score(reference: &EmbeddingSet, new: &EmbeddingSet) -> Result<SsfScore> {
    check_compatible(reference, new)?;
    let (mut sum, mut n, mut excluded) = (0.0, 0usize, 0usize);
    for i in 0..reference.len() {
        let a: Vec<f64> = reference.vectors.row(i).iter().copied().collect();
        let b: Vec<f64> = new.vectors.row(i).iter().copied().collect();
        match cosine(&a, &b) {
            Some(c) => {
                sum += c;
                n += 1;
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        log::warn!("ssf: excluded {excluded} zero-norm embedding rows");
    }
    if n == 0 {
        return Err(Error::Domain("ssf: every embedding row has zero norm".into()));
    }
    Ok(SsfScore {
        score: sum / n as f64,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vector,
    pub cov: Mat,
}

/// Sample mean and unbiased covariance of the rows.
pub fn gaussian_fit_rows(x: &Mat) -> Result<GaussianStats> {
    let p = x.nrows();
    if p < 2 {
        return Err(Error::Domain(format!("gaussian fit needs at least 2 rows, got {p}")));
    }
    let mean = x.row_sum().transpose() / p as f64;
    let mut centered = x.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (p - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov })
}

pub fn gaussian_fit(e: &EmbeddingSet) -> Result<GaussianStats> {
    gaussian_fit_rows(&e.vectors)
}

const PSD_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-8;

/// Symmetric PSD square root by eigendecomposition; tiny negative eigenvalues
/// are clamped to zero.
fn psd_sqrt(m: &Mat, what: &str) -> Result<Mat> {
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.amax().max(1.0);
    let eig = sym.symmetric_eigen();
    let mut d = eig.eigenvalues.clone();
    for l in d.iter_mut() {
        if *l < -PSD_TOL * scale {
            return Err(Error::Numerical(format!("{what} is not positive semi-definite (eigenvalue {l:e})")));
        }
        *l = l.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`.
///
/// The trace of `(Σ₁Σ₂)^{1/2}` is taken from the symmetric similar matrix
/// `Σ₁^{1/2} Σ₂ Σ₁^{1/2}`.
pub fn frechet_distance(g1: &GaussianStats, g2: &GaussianStats) -> Result<f64> {
    if g1.mean.len() != g2.mean.len() || g1.cov.shape() != g2.cov.shape() {
        return Err(Error::Contract(format!(
            "gaussian dims differ: {} vs {}",
            g1.mean.len(),
            g2.mean.len()
        )));
    }
    let dmu = (&g1.mean - &g2.mean).norm_squared();
    let s1 = psd_sqrt(&g1.cov, "first covariance")?;
    psd_sqrt(&g2.cov, "second covariance")?;
    let inner = &s1 * &g2.cov * &s1;
    let cross = psd_sqrt(&inner, "covariance product")?.trace();
    let d = dmu + g1.cov.trace() + g2.cov.trace() - 2.0 * cross;
    let tol = FD_TOL * (1.0 + g1.cov.trace().abs() + g2.cov.trace().abs());
    if d < -tol {
        return Err(Error::Numerical(format!("frechet distance came out negative ({d:e})")));
    }
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub step: u64,
    pub ssf: f64,
    pub ssfd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    points: Vec<DriftPoint>,
}

impl DriftSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: DriftPoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if p.step <= last.step {
                return Err(Error::Contract(format!(
                    "drift steps must increase: {} after {}",
                    p.step, last.step
                )));
            }
        }
        self.points.push(p);
        Ok(())
    }

    pub fn points(&self) -> &[DriftPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn prefix(&self, n: usize) -> DriftSeries {
        DriftSeries {
            points: self.points[..n].to_vec(),
        }
    }
}

/// Global least-squares slope of SS-FD against step.
pub fn drift_rate(series: &DriftSeries) -> Result<f64> {
    let pts = series.points();
    if pts.len() < 2 {
        return Err(Error::Domain(format!("drift rate needs at least 2 points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.step as f64).sum::<f64>() / n;
    let y0 = pts[0].ssfd;
    let my = pts.iter().map(|p| p.ssfd - y0).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in pts {
        let dx = p.step as f64 - mx;
        sxy += dx * (p.ssfd - y0 - my);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FepBaseline {
    pub ssf_base: f64,
    pub ssfd_base: f64,
}

/// `step,ssf,ssfd,ssf_base,ssfd_base,v_drift_cumulative`; the slope column is
/// empty until two points exist.
pub fn write_fep_csv<W: Write>(series: &DriftSeries, baseline: &FepBaseline, mut w: W) -> Result<()> {
    let io = |source| Error::Io {
        path: "<fep csv>".into(),
        source,
    };
    writeln!(w, "step,ssf,ssfd,ssf_base,ssfd_base,v_drift_cumulative").map_err(io)?;
    for (i, p) in series.points().iter().enumerate() {
        let v = if i >= 1 {
            drift_rate(&series.prefix(i + 1))?.to_string()
        } else {
            String::new()
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.step, p.ssf, p.ssfd, baseline.ssf_base, baseline.ssfd_base, v
        )
        .map_err(io)?;
    }
    Ok(())
}
