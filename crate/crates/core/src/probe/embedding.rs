use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::forge::FrameBuffer;
use crate::net::{Mat, Vector};
use crate::rng;
use crate::tensor_file::{Tensor, TensorFile};

/// Maps a frame set to a fixed-length vector. Must be deterministic.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, frames: &[FrameBuffer]) -> Result<Vector>;
}

const GRID: usize = 8;
const ORIENT_BINS: usize = 8;
const N_FEATURES: usize = GRID * GRID * 3 + ORIENT_BINS;

/// Fixed random projection of coarse frame statistics: 8×8 block colour
/// means plus a magnitude-weighted gradient orientation histogram, averaged
/// over frames.
#[derive(Debug, Clone)]
pub struct FrameStatsProvider {
    name: String,
    proj: Mat,
}

impl FrameStatsProvider {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_SEED: u64 = 0x05ee_de4b;

    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[0xe4b]);
        let scale = 1.0 / (N_FEATURES as f64).sqrt();
        let proj = Mat::from_fn(dim, N_FEATURES, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        Self {
            name: format!("frame-stats-{dim}-{seed:x}"),
            proj,
        }
    }

    fn features(frame: &FrameBuffer) -> Vector {
        let mut f = Vector::zeros(N_FEATURES);
        let small = frame.downsample(GRID, GRID);
        for (i, v) in small.data().iter().enumerate() {
            f[i] = 2.0 * v - 1.0;
        }
        let (w, h) = frame.dims();
        let lum = |x: usize, y: usize| frame.luminance_at(x, y);
        let mut hist = [0.0; ORIENT_BINS];
        for y in 0..h {
            for x in 0..w {
                let gx = lum((x + 1).min(w - 1), y) - lum(x.saturating_sub(1), y);
                let gy = lum(x, (y + 1).min(h - 1)) - lum(x, y.saturating_sub(1));
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                let bin = ((theta / std::f64::consts::PI * ORIENT_BINS as f64) as usize).min(ORIENT_BINS - 1);
                hist[bin] += mag;
            }
        }
        let npx = (w * h) as f64;
        for (b, v) in hist.iter().enumerate() {
            f[GRID * GRID * 3 + b] = 4.0 * v / npx;
        }
        f
    }
}

impl Default for FrameStatsProvider {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, Self::DEFAULT_SEED)
    }
}

impl EmbeddingProvider for FrameStatsProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.proj.nrows()
    }

    fn embed(&self, frames: &[FrameBuffer]) -> Result<Vector> {
        if frames.is_empty() {
            return Err(Error::Contract("cannot embed an empty frame set".into()));
        }
        let mut acc = Vector::zeros(N_FEATURES);
        for f in frames {
            acc += Self::features(f);
        }
        acc /= frames.len() as f64;
        Ok(&self.proj * acc)
    }
}

/// Per-prompt embedding vectors; row `i` belongs to `prompts[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub provider: String,
    pub prompts: Vec<String>,
    pub vectors: Mat,
}

const EMBED_TENSOR: &str = "embeddings";
const EMBED_FORMAT: &str = "camforge-embeddings/1";

impl EmbeddingSet {
    pub fn new(provider: impl Into<String>, prompts: Vec<String>, vectors: Mat) -> Result<Self> {
        if prompts.len() != vectors.nrows() {
            return Err(Error::Contract(format!(
                "{} prompts for {} embedding rows",
                prompts.len(),
                vectors.nrows()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("embedding set contains non-finite values".into()));
        }
        Ok(Self {
            provider: provider.into(),
            prompts,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Rows reordered by `perm` (row `i` of the result is row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let vectors = Mat::from_fn(perm.len(), self.dim(), |i, j| self.vectors[(perm[i], j)]);
        Self {
            provider: self.provider.clone(),
            prompts: perm.iter().map(|&i| self.prompts[i].clone()).collect(),
            vectors,
        }
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".prompts.json");
        PathBuf::from(s)
    }

    /// Stored as f32; values are rounded on the way out.
    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let mut f = TensorFile::new();
        let data: Vec<f64> = self.vectors.transpose().iter().copied().collect();
        f.insert(EMBED_TENSOR, Tensor::from_f64(vec![self.len(), self.dim()], &data)?);
        f.metadata.insert("format".into(), EMBED_FORMAT.into());
        f.metadata.insert("provider".into(), self.provider.clone());
        Ok(f)
    }

    pub fn prompts_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.prompts).map_err(|e| Error::Contract(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_tensor_file()?.write(path)?;
        let side = Self::sidecar_path(path);
        std::fs::write(&side, self.prompts_json()? + "\n").map_err(|source| Error::Io { path: side, source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = TensorFile::read(path)?;
        let fmt_err = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let t = f.get(EMBED_TENSOR)?;
        let [p, d] = t.shape[..] else {
            return Err(fmt_err(format!("embedding tensor has shape {:?}", t.shape)));
        };
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|source| Error::Io {
            path: side.clone(),
            source,
        })?;
        let prompts: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: side,
            message: e.to_string(),
        })?;
        let provider = f.metadata.get("provider").cloned().unwrap_or_default();
        let vectors = Mat::from_row_slice(p, d, &t.to_f64());
        Self::new(provider, prompts, vectors).map_err(|e| fmt_err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seed: u64) -> FrameBuffer {
        let mut r = rng::stream(seed, &[]);
        let data = (0..16 * 16 * 3).map(|_| r.random::<f64>()).collect();
        FrameBuffer::from_raw(16, 16, data).unwrap()
    }

    #[test]
    fn provider_is_bit_deterministic() {
        let p = FrameStatsProvider::default();
        let frames = vec![frame(1), frame(2)];
        let a = p.embed(&frames).unwrap();
        let b = FrameStatsProvider::default().embed(&frames).unwrap();
        assert_eq!(a.len(), 64);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, p.embed(&[frame(3)]).unwrap());
    }

    #[test]
    fn orientation_histogram_separates_stripes() {
        let mut h = FrameBuffer::zeros(16, 16);
        let mut v = FrameBuffer::zeros(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                h.set_pixel(x, y, [(y % 2) as f64; 3]);
                v.set_pixel(x, y, [(x % 2) as f64; 3]);
            }
        }
        let (fh, fv) = (FrameStatsProvider::features(&h), FrameStatsProvider::features(&v));
        let tail = |f: &Vector| f.rows(GRID * GRID * 3, ORIENT_BINS).into_owned();
        assert!(tail(&fh).iter().any(|&x| x > 0.0));
        assert_ne!(tail(&fh), tail(&fv));
    }

    #[test]
    fn file_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let v = Mat::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1 - 0.3);
        let e = EmbeddingSet::new("p", vec!["a".into(), "b".into(), "c".into()], v).unwrap();
        e.write(&path).unwrap();
        let back = EmbeddingSet::read(&path).unwrap();
        assert_eq!(back.prompts, e.prompts);
        assert_eq!(back.provider, "p");
        assert_eq!(back.to_tensor_file().unwrap().to_bytes(), std::fs::read(&path).unwrap());
        assert!((back.vectors - e.vectors).amax() < 1e-7);
    }

    #[test]
    fn rejects_mismatch_and_nan() {
        assert!(EmbeddingSet::new("p", vec!["a".into()], Mat::zeros(2, 2)).is_err());
        let mut m = Mat::zeros(1, 2);
        m[(0, 1)] = f64::NAN;
        assert!(EmbeddingSet::new("p", vec!["a".into()], m).is_err());
    }
}
