//! Normalized control scalars, their mapping onto physical camera quantities,
//! and the stratified "pyramid" sampling plan used to build datasets.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A normalized condition value in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ControlScalar(f64);

impl ControlScalar {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && (-1.0..=1.0).contains(&c) {
            Ok(Self(c))
        } else {
            Err(Error::Domain(format!("control scalar {c} outside [-1, 1]")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Interpolation parameter `t = (c + 1) / 2` in `[0, 1]`.
    #[inline]
    pub fn t(self) -> f64 {
        (self.0 + 1.0) * 0.5
    }
}

impl TryFrom<f64> for ControlScalar {
    type Error = Error;
    fn try_from(c: f64) -> Result<Self> {
        Self::new(c)
    }
}

impl From<ControlScalar> for f64 {
    fn from(c: ControlScalar) -> f64 {
        c.0
    }
}

impl fmt::Display for ControlScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Positive range mapped in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub lo: f64,
    pub hi: f64,
}

impl LogRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = Self { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_finite() && self.hi.is_finite() && 0.0 < self.lo && self.lo < self.hi {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "log range requires 0 < lo < hi, got [{}, {}]",
                self.lo, self.hi
            )))
        }
    }

    /// Frame-rate range for the shutter effect, in frames per second.
    pub fn default_fps() -> Self {
        Self { lo: 4.0, hi: 256.0 }
    }

    pub fn default_fstop() -> Self {
        Self { lo: 1.2, hi: 16.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KelvinRange {
    pub k_lo: f64,
    pub k_hi: f64,
    pub k_ref: f64,
    /// When true (the default) `c = -1` maps to `k_lo`, the warm end.
    #[serde(default = "default_true")]
    pub warm_at_negative: bool,
}

fn default_true() -> bool {
    true
}

impl Default for KelvinRange {
    fn default() -> Self {
        Self {
            k_lo: 2000.0,
            k_hi: 12000.0,
            k_ref: 6500.0,
            warm_at_negative: true,
        }
    }
}

impl KelvinRange {
    pub fn validate(&self) -> Result<()> {
        let ok = (KELVIN_MIN..=KELVIN_MAX).contains(&self.k_lo)
            && (KELVIN_MIN..=KELVIN_MAX).contains(&self.k_hi)
            && self.k_lo < self.k_hi
            && self.k_lo <= self.k_ref
            && self.k_ref <= self.k_hi;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "kelvin range requires {KELVIN_MIN} <= lo < hi <= {KELVIN_MAX} and lo <= ref <= hi, got lo={} hi={} ref={}",
                self.k_lo, self.k_hi, self.k_ref
            )))
        }
    }
}

/// `exp((1-t) ln lo + t ln hi)` with `t = (c+1)/2`.
pub fn map_log_centered(c: ControlScalar, range: LogRange) -> Result<f64> {
    range.validate()?;
    let t = c.t();
    // Exact endpoints regardless of exp/ln round-off.
    if t == 0.0 {
        return Ok(range.lo);
    }
    if t == 1.0 {
        return Ok(range.hi);
    }
    Ok(((1.0 - t) * range.lo.ln() + t * range.hi.ln()).exp())
}

/// Exposure duration `1 / FPS(c)` in seconds.
pub fn map_exposure(c: ControlScalar, fps_range: LogRange) -> Result<f64> {
    Ok(1.0 / map_log_centered(c, fps_range)?)
}

/// Interpolates linearly in mired space (10⁶ / K).
pub fn map_kelvin(c: ControlScalar, kr: KelvinRange) -> Result<f64> {
    kr.validate()?;
    let t = if kr.warm_at_negative { c.t() } else { 1.0 - c.t() };
    if t == 0.0 {
        return Ok(kr.k_lo);
    }
    if t == 1.0 {
        return Ok(kr.k_hi);
    }
    let mired = (1.0 - t) * (1e6 / kr.k_lo) + t * (1e6 / kr.k_hi);
    Ok(1e6 / mired)
}

pub const KELVIN_MIN: f64 = 1000.0;
pub const KELVIN_MAX: f64 = 15000.0;

/// Blackbody colour approximation on a 0..255 scale.
///
/// Piecewise power/log curve fit (the Helland fit): with `t = K / 100`,
///
/// * red   = 255 for t <= 66, else 329.698727446 (t-60)^-0.1332047592
/// * green = 99.4708025861 ln t - 161.1195681661 for t <= 66,
///   else 288.1221695283 (t-60)^-0.0755148492
/// * blue  = 255 for t >= 66, 0 for t <= 19, else 138.5177312231 ln(t-10) - 305.0447927307
///
/// each clamped to [0, 255].
pub fn blackbody_rgb(kelvin: f64) -> Result<[f64; 3]> {
    if !(KELVIN_MIN..=KELVIN_MAX).contains(&kelvin) {
        return Err(Error::Domain(format!(
            "temperature {kelvin} K outside [{KELVIN_MIN}, {KELVIN_MAX}]"
        )));
    }
    let t = kelvin / 100.0;
    let r = if t <= 66.0 {
        255.0
    } else {
        329.698727446 * (t - 60.0).powf(-0.1332047592)
    };
    let g = if t <= 66.0 {
        99.4708025861 * t.ln() - 161.1195681661
    } else {
        288.1221695283 * (t - 60.0).powf(-0.0755148492)
    };
    let b = if t >= 66.0 {
        255.0
    } else if t <= 19.0 {
        0.0
    } else {
        138.5177312231 * (t - 10.0).ln() - 305.0447927307
    };
    Ok([r, g, b].map(|v| v.clamp(0.0, 255.0)))
}

/// Per-channel gains `rgb(k) / rgb(k_ref)`.
pub fn kelvin_to_rgb_gains(k: f64, k_ref: f64) -> Result<[f64; 3]> {
    let num = blackbody_rgb(k)?;
    let den = blackbody_rgb(k_ref)?;
    if den.iter().any(|&d| d <= 0.0) {
        return Err(Error::Domain(format!(
            "reference temperature {k_ref} K has a zero channel in the blackbody fit"
        )));
    }
    Ok([num[0] / den[0], num[1] / den[1], num[2] / den[2]])
}

/// `n + 1` equally spaced edges spanning `[-1, 1]`.
pub fn bin_edges(n: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::Domain("bin count must be at least 1".into()));
    }
    Ok((0..=n).map(|i| bin_edge(i, n)).collect())
}

#[inline]
fn bin_edge(i: usize, n: usize) -> f64 {
    if i == n {
        1.0
    } else {
        -1.0 + 2.0 * i as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidPlan {
    pub layer_counts: Vec<usize>,
    #[serde(rename = "seed")]
    pub rng_seed: u64,
}

impl Default for PyramidPlan {
    fn default() -> Self {
        Self {
            layer_counts: vec![9, 7, 5, 3, 1],
            rng_seed: 0,
        }
    }
}

impl PyramidPlan {
    pub fn new(layer_counts: Vec<usize>, rng_seed: u64) -> Result<Self> {
        let plan = Self {
            layer_counts,
            rng_seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Single layer of `n` conditions, the one-shot ablation regime.
    pub fn one_shot(n: usize, rng_seed: u64) -> Self {
        Self {
            layer_counts: vec![n],
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_counts.is_empty() {
            return Err(Error::Config("pyramid plan has no layers".into()));
        }
        if self.layer_counts.contains(&0) {
            return Err(Error::Config("pyramid layer counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.layer_counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledCondition {
    pub layer_index: usize,
    pub bin_index: usize,
    pub c: ControlScalar,
}

/// One jittered draw per bin, per layer.
///
/// Each draw is a pure function of `(seed, layer, bin)`, so the result does not
/// depend on evaluation order. Output is grouped by layer, bins ascending.
pub fn pyramid_sample(plan: &PyramidPlan) -> Result<Vec<SampledCondition>> {
    plan.validate()?;
    let mut out = Vec::with_capacity(plan.total());
    for (layer, &n) in plan.layer_counts.iter().enumerate() {
        for bin in 0..n {
            let lo = bin_edge(bin, n);
            let hi = bin_edge(bin + 1, n);
            let u = rng::unit_open(plan.rng_seed, &[layer as u64, bin as u64]);
            let mut c = lo + u * (hi - lo);
            // Keep the draw strictly inside its bin even after rounding.
            if c <= lo || c >= hi {
                c = 0.5 * (lo + hi);
            }
            out.push(SampledCondition {
                layer_index: layer,
                bin_index: bin,
                c: ControlScalar::new(c)?,
            });
        }
    }
    Ok(out)
}

/// CSV with header `layer,bin,c`.
pub fn write_conditions_csv<W: Write>(mut w: W, conds: &[SampledCondition]) -> std::io::Result<()> {
    writeln!(w, "layer,bin,c")?;
    for s in conds {
        writeln!(w, "{},{},{}", s.layer_index, s.bin_index, s.c.value())?;
    }
    Ok(())
}
