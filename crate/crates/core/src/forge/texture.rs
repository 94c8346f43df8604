use serde::{Deserialize, Serialize};

use crate::rng;

/// Multi-octave colour value noise; the high-entropy fill used for the
/// "complex" counterpart of the primitive datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTexture {
    pub seed: u64,
    /// Coarsest lattice spacing in pixels.
    pub cell: f64,
    pub octaves: u32,
}

impl NoiseTexture {
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut amp = 1.0;
        let mut norm = 0.0;
        let mut cell = self.cell;
        for o in 0..self.octaves.max(1) {
            let v = self.lattice(o as u64, x / cell, y / cell);
            for ch in 0..3 {
                acc[ch] += amp * v[ch];
            }
            norm += amp;
            amp *= 0.6;
            cell = (cell * 0.5).max(1.0);
        }
        acc.map(|a| a / norm)
    }

    /// Mean-preserving modulation of `base`: each channel swings by up to
    /// `min(b, 1 - b)`, so the result stays in `[0, 1]`.
    pub fn modulate(&self, base: [f64; 3], x: f64, y: f64) -> [f64; 3] {
        let n = self.sample(x, y);
        let mut out = base;
        for ch in 0..3 {
            let amp = base[ch].min(1.0 - base[ch]).max(0.0);
            out[ch] = base[ch] + amp * (2.0 * n[ch] - 1.0);
        }
        out
    }

    fn lattice(&self, octave: u64, u: f64, v: f64) -> [f64; 3] {
        let (iu, iv) = (u.floor(), v.floor());
        let (fu, fv) = (smooth(u - iu), smooth(v - iv));
        let corner = |du: i64, dv: i64| -> [f64; 3] {
            let ku = (iu as i64 + du) as u64;
            let kv = (iv as i64 + dv) as u64;
            [0u64, 1, 2].map(|ch| rng::unit_open(self.seed, &[octave, ku, kv, ch]))
        };
        let (c00, c10, c01, c11) = (corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1));
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let top = c00[ch] + fu * (c10[ch] - c00[ch]);
            let bot = c01[ch] + fu * (c11[ch] - c01[ch]);
            out[ch] = top + fv * (bot - top);
        }
        out
    }
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let t = NoiseTexture {
            seed: 9,
            cell: 16.0,
            octaves: 4,
        };
        for i in 0..200 {
            let (x, y) = (i as f64 * 3.7, i as f64 * 1.3);
            let a = t.sample(x, y);
            assert_eq!(a, t.sample(x, y));
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn modulation_stays_in_range_and_keeps_mean() {
        let t = NoiseTexture {
            seed: 4,
            cell: 8.0,
            octaves: 5,
        };
        let base = [0.1, 0.5, 0.95];
        let mut mean = [0.0; 3];
        let n = 256 * 256;
        for i in 0..n {
            let (x, y) = ((i % 256) as f64 + 0.5, (i / 256) as f64 + 0.5);
            let m = t.modulate(base, x, y);
            for ch in 0..3 {
                assert!((0.0..=1.0).contains(&m[ch]));
                mean[ch] += m[ch] / n as f64;
            }
        }
        for ch in 0..3 {
            assert!((mean[ch] - base[ch]).abs() < 0.05 * base[ch].min(1.0 - base[ch]) + 1e-3);
        }
        assert_eq!(t.modulate([0.0, 1.0, 0.0], 3.0, 4.0), [0.0, 1.0, 0.0]);
    }
}
