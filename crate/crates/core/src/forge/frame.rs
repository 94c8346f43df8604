use std::path::Path;

use crate::error::{Error, Result};

/// Rec.709 luma weights.
pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Row-major `height × width × 3` image with real-valued channels.
///
/// Values are nominally in `[0, 1]`; accumulation may leave that range until
/// [`FrameBuffer::clamped`] or export.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FrameBuffer {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Contract(format!(
                "frame data has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `self = self * (1 - a) + rgb * a` at one pixel.
    #[inline]
    pub fn blend_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3], a: f64) {
        let i = (y * self.width + x) * 3;
        for ch in 0..3 {
            self.data[i + ch] += a * (rgb[ch] - self.data[i + ch]);
        }
    }

    pub fn add_assign(&mut self, other: &FrameBuffer) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn luminance_at(&self, x: usize, y: usize) -> f64 {
        let p = self.pixel(x, y);
        LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]
    }

    pub fn mean_luminance(&self) -> f64 {
        let n = (self.width * self.height) as f64;
        self.data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .sum::<f64>()
            / n
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.width * self.height) as f64;
        let mut acc = [0.0; 3];
        for p in self.data.chunks_exact(3) {
            for ch in 0..3 {
                acc[ch] += p[ch];
            }
        }
        acc.map(|a| a / n)
    }

    pub fn max_abs_diff(&self, other: &FrameBuffer) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sum of squared Sobel responses of the luminance over interior pixels.
    pub fn gradient_energy(&self) -> f64 {
        let (w, h) = self.dims();
        if w < 3 || h < 3 {
            return 0.0;
        }
        let lum: Vec<f64> = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect();
        let at = |x: usize, y: usize| lum[y * w + x];
        let mut e = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
                let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
                e += gx * gx + gy * gy;
            }
        }
        e
    }

    /// Area-average resample to `nw × nh`; exact box filter for any ratio.
    pub fn downsample(&self, nw: usize, nh: usize) -> FrameBuffer {
        let mut out = FrameBuffer::zeros(nw, nh);
        let sx = self.width as f64 / nw as f64;
        let sy = self.height as f64 / nh as f64;
        for oy in 0..nh {
            let y0 = oy as f64 * sy;
            let y1 = y0 + sy;
            for ox in 0..nw {
                let x0 = ox as f64 * sx;
                let x1 = x0 + sx;
                let mut acc = [0.0; 3];
                let mut wsum = 0.0;
                for y in (y0.floor() as usize)..(y1.ceil() as usize).min(self.height) {
                    let wy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
                    for x in (x0.floor() as usize)..(x1.ceil() as usize).min(self.width) {
                        let wx = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                        let wgt = wx * wy;
                        let p = self.pixel(x, y);
                        for ch in 0..3 {
                            acc[ch] += wgt * p[ch];
                        }
                        wsum += wgt;
                    }
                }
                out.set_pixel(ox, oy, acc.map(|a| a / wsum));
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::Contract("frame buffer size mismatch".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::format(path, other.to_string()),
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        Self::from_raw(w as usize, h as usize, data)
    }
}
