use super::frame::FrameBuffer;
use crate::control::{kelvin_to_rgb_gains, KelvinRange};
use crate::error::{Error, Result};

/// Global white-balance shift to Kelvin `k` relative to `kr.k_ref`.
///
/// With `preserve_luma` the gained frame is rescaled so its mean Rec.709
/// luminance matches the input before the final clamp.
pub fn apply_white_balance(
    frame: &FrameBuffer,
    k: f64,
    kr: &KelvinRange,
    preserve_luma: bool,
) -> Result<FrameBuffer> {
    let gains = kelvin_to_rgb_gains(k, kr.k_ref)?;
    let mut out = frame.clone();
    for p in out.data_mut().chunks_exact_mut(3) {
        for ch in 0..3 {
            p[ch] *= gains[ch];
        }
    }
    if preserve_luma {
        let before = frame.mean_luminance();
        let after = out.mean_luminance();
        if after > 0.0 {
            out.scale(before / after);
        }
    }
    Ok(out.clamped())
}

/// Non-overlapping box average over runs of `window` consecutive frames.
/// A trailing partial window is dropped.
pub fn accumulate_frames(frames: &[FrameBuffer], window: usize) -> Result<Vec<FrameBuffer>> {
    if frames.is_empty() {
        return Err(Error::Domain("no frames to accumulate".into()));
    }
    if window == 0 || window > frames.len() {
        return Err(Error::Domain(format!(
            "window {window} must be in [1, {}]",
            frames.len()
        )));
    }
    let dims = frames[0].dims();
    if frames.iter().any(|f| f.dims() != dims) {
        return Err(Error::Contract("frames differ in size".into()));
    }
    Ok(frames
        .chunks_exact(window)
        .map(|group| {
            if window == 1 {
                return group[0].clone();
            }
            let mut acc = FrameBuffer::zeros(dims.0, dims.1);
            for f in group {
                acc.add_assign(f);
            }
            acc.scale(1.0 / window as f64);
            acc
        })
        .collect())
}
