//! Deterministic fixtures shared by the benchmarks.

use camforge_core::net::Mat;
use camforge_core::probe::GaussianStats;
use camforge_core::rng;

/// Entries uniform in `(-1, 1)`, a pure function of `seed` and position.
pub fn uniform_mat(seed: u64, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |i, j| 2.0 * rng::unit_open(seed, &[i as u64, j as u64]) - 1.0)
}

/// A well-conditioned `d`-dimensional Gaussian.
pub fn gaussian(seed: u64, d: usize) -> GaussianStats {
    let a = uniform_mat(seed, d, d);
    GaussianStats {
        mean: uniform_mat(seed ^ 1, d, 1).column(0).into_owned(),
        cov: &a * a.transpose() / d as f64 + Mat::identity(d, d) * 0.1,
    }
}
