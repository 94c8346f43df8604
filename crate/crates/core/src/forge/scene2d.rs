//! Moving 2D primitives on a flat canvas, with analytic motion and
//! supersampled rasterization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frame::FrameBuffer;
use super::texture::NoiseTexture;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Star,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Star,
    ];
}

/// A primitive whose extent fits inside a disc of radius `size` around `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub color: [f64; 3],
    pub center: [f64; 2],
    pub size: f64,
    /// Pixels per second.
    pub velocity: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<NoiseTexture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec2D {
    pub canvas: (usize, usize),
    pub background: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_texture: Option<NoiseTexture>,
    pub shapes: Vec<ShapeSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneStyle {
    /// Flat-coloured primitives on a uniform background.
    #[default]
    Primitives,
    /// Same motion, but background and shapes carry multi-octave noise.
    NoiseTexture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams2D {
    pub canvas: (usize, usize),
    /// Inclusive range of shape counts.
    pub shape_count: (usize, usize),
    pub size_range: (f64, f64),
    /// Speed magnitude range in pixels per second.
    pub speed_range: (f64, f64),
    #[serde(default)]
    pub style: SceneStyle,
}

impl Default for SceneParams2D {
    fn default() -> Self {
        Self {
            canvas: (512, 512),
            shape_count: (1, 3),
            size_range: (24.0, 64.0),
            speed_range: (20.0, 80.0),
            style: SceneStyle::Primitives,
        }
    }
}

impl SceneParams2D {
    /// Static 2–4 shape layouts used for the temperature effect.
    pub fn temperature_default() -> Self {
        Self {
            shape_count: (2, 4),
            speed_range: (0.0, 0.0),
            ..Self::default()
        }
    }

    /// Same geometry, scaled to another canvas size.
    pub fn scaled_to(&self, canvas: (usize, usize)) -> Self {
        let s = canvas.0.min(canvas.1) as f64 / self.canvas.0.min(self.canvas.1) as f64;
        Self {
            canvas,
            size_range: (self.size_range.0 * s, self.size_range.1 * s),
            speed_range: (self.speed_range.0 * s, self.speed_range.1 * s),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.canvas;
        let (nlo, nhi) = self.shape_count;
        let (slo, shi) = self.size_range;
        let (vlo, vhi) = self.speed_range;
        if w < 8 || h < 8 {
            return Err(Error::Config(format!("canvas {w}x{h} too small")));
        }
        if nlo < 1 || nhi > 4 || nlo > nhi {
            return Err(Error::Config(format!(
                "shape count range ({nlo}, {nhi}) must lie in [1, 4]"
            )));
        }
        if !(slo > 0.0 && slo <= shi && 2.0 * shi < w.min(h) as f64) {
            return Err(Error::Config(format!(
                "size range ({slo}, {shi}) degenerate for a {w}x{h} canvas"
            )));
        }
        if !(vlo >= 0.0 && vlo <= vhi && vhi.is_finite()) {
            return Err(Error::Config(format!("speed range ({vlo}, {vhi}) invalid")));
        }
        Ok(())
    }
}

/// Saturated random colour.
pub(crate) fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    let h = rng.random::<f64>() * 6.0;
    let s = rng.random_range(0.6..1.0);
    let v = rng.random_range(0.7..1.0);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn random_scene_2d(seed: u64, params: &SceneParams2D) -> Result<SceneSpec2D> {
    params.validate()?;
    let mut rng = rng::stream(seed, &[0x5ce2d]);
    let (w, h) = params.canvas;
    let n = rng.random_range(params.shape_count.0..=params.shape_count.1);
    let textured = params.style == SceneStyle::NoiseTexture;
    let base_cell = w.min(h) as f64 / 8.0;

    let g = rng.random_range(0.08..0.3);
    let background = [
        g + rng.random_range(0.0..0.08),
        g + rng.random_range(0.0..0.08),
        g + rng.random_range(0.0..0.08),
    ];
    let background_texture = textured.then(|| NoiseTexture {
        seed: rng.random(),
        cell: base_cell,
        octaves: 5,
    });

    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = ShapeKind::ALL[rng.random_range(0..4)];
        let color = random_color(&mut rng);
        let size = if params.size_range.0 == params.size_range.1 {
            params.size_range.0
        } else {
            rng.random_range(params.size_range.0..params.size_range.1)
        };
        let center = [
            rng.random_range(size..=(w as f64 - size)),
            rng.random_range(size..=(h as f64 - size)),
        ];
        let speed = if params.speed_range.0 == params.speed_range.1 {
            params.speed_range.0
        } else {
            rng.random_range(params.speed_range.0..params.speed_range.1)
        };
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let texture = textured.then(|| NoiseTexture {
            seed: rng.random(),
            cell: (size / 2.0).max(2.0),
            octaves: 4,
        });
        shapes.push(ShapeSpec {
            kind,
            color,
            center,
            size,
            velocity: [speed * angle.cos(), speed * angle.sin()],
            texture,
        });
    }
    Ok(SceneSpec2D {
        canvas: params.canvas,
        background,
        background_texture,
        shapes,
        seed,
    })
}

/// Position and velocity along one axis after `dt`, with elastic reflection
/// keeping the coordinate inside `[lo, hi]`.
fn fold_axis(x: f64, v: f64, dt: f64, lo: f64, hi: f64) -> (f64, f64) {
    if v == 0.0 || dt == 0.0 {
        return (x, v);
    }
    let span = hi - lo;
    if span <= 0.0 {
        return (x + v * dt, v);
    }
    let u = (x + v * dt - lo).rem_euclid(2.0 * span);
    if u <= span {
        (lo + u, v)
    } else {
        (lo + 2.0 * span - u, -v)
    }
}

/// Advances every shape by `dt` seconds (negative values rewind).
///
/// Reflection is evaluated in closed form, so positions at any time are exact
/// functions of the initial state.
pub fn advance(scene: &SceneSpec2D, dt: f64) -> SceneSpec2D {
    let (w, h) = scene.canvas;
    let mut out = scene.clone();
    for s in &mut out.shapes {
        let (x, vx) = fold_axis(s.center[0], s.velocity[0], dt, s.size, w as f64 - s.size);
        let (y, vy) = fold_axis(s.center[1], s.velocity[1], dt, s.size, h as f64 - s.size);
        s.center = [x, y];
        s.velocity = [vx, vy];
    }
    out
}

pub fn is_static(scene: &SceneSpec2D) -> bool {
    scene
        .shapes
        .iter()
        .all(|s| s.velocity[0] == 0.0 && s.velocity[1] == 0.0)
}

fn polygon(kind: ShapeKind, size: f64) -> Vec<[f64; 2]> {
    use std::f64::consts::{FRAC_PI_2, TAU};
    match kind {
        ShapeKind::Triangle => (0..3)
            .map(|i| {
                let a = -FRAC_PI_2 + TAU * i as f64 / 3.0;
                [size * a.cos(), size * a.sin()]
            })
            .collect(),
        ShapeKind::Star => (0..10)
            .map(|i| {
                let a = -FRAC_PI_2 + TAU * i as f64 / 10.0;
                let r = if i % 2 == 0 { size } else { 0.4 * size };
                [r * a.cos(), r * a.sin()]
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn inside_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Coverage predicate in shape-local coordinates.
pub(crate) struct Silhouette {
    kind: ShapeKind,
    size: f64,
    poly: Vec<[f64; 2]>,
}

impl Silhouette {
    pub(crate) fn new(kind: ShapeKind, size: f64) -> Self {
        Self {
            kind,
            size,
            poly: polygon(kind, size),
        }
    }

    #[inline]
    pub(crate) fn contains(&self, dx: f64, dy: f64) -> bool {
        match self.kind {
            ShapeKind::Circle => dx * dx + dy * dy <= self.size * self.size,
            ShapeKind::Square => dx.abs() <= self.size && dy.abs() <= self.size,
            ShapeKind::Triangle | ShapeKind::Star => inside_polygon(&self.poly, dx, dy),
        }
    }

    /// Unsigned distance from a local point to the silhouette outline.
    fn outline_distance(&self, dx: f64, dy: f64) -> f64 {
        match self.kind {
            ShapeKind::Circle => ((dx * dx + dy * dy).sqrt() - self.size).abs(),
            ShapeKind::Square => {
                let (ex, ey) = (dx.abs() - self.size, dy.abs() - self.size);
                if ex <= 0.0 && ey <= 0.0 {
                    (-ex).min(-ey)
                } else {
                    (ex.max(0.0).powi(2) + ey.max(0.0).powi(2)).sqrt()
                }
            }
            ShapeKind::Triangle | ShapeKind::Star => {
                let n = self.poly.len();
                (0..n)
                    .map(|i| segment_distance(self.poly[i], self.poly[(i + 1) % n], dx, dy))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Fraction of supersampling points inside the silhouette for the pixel
    /// whose top-left corner sits at local `(ux, uy)`; x is stretched by
    /// `xscale` before the test. Pixels far from the outline skip sampling,
    /// with results identical to sampling them.
    pub(crate) fn coverage(&self, ux: f64, uy: f64, xscale: f64) -> f64 {
        let (cx, cy) = ((ux + 0.5) * xscale, uy + 0.5);
        let reach = 0.5 * (xscale * xscale + 1.0).sqrt();
        if self.outline_distance(cx, cy) > reach * (1.0 + 1e-9) + 1e-9 {
            return if self.contains(cx, cy) { 1.0 } else { 0.0 };
        }
        let hits = SUBSAMPLES
            .iter()
            .filter(|(ox, oy)| self.contains((ux + ox) * xscale, uy + oy))
            .count();
        hits as f64 / SUBSAMPLES.len() as f64
    }
}

fn segment_distance(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> f64 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let (wx, wy) = (x - a[0], y - a[1]);
    let t = ((wx * vx + wy * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    ((wx - t * vx).powi(2) + (wy - t * vy).powi(2)).sqrt()
}

const SS_AXIS: usize = 16;

/// Sub-pixel sample offsets of the supersampling grid, row-major.
const SUBSAMPLES: [(f64, f64); SS_AXIS * SS_AXIS] = subsample_grid();

const fn subsample_grid() -> [(f64, f64); SS_AXIS * SS_AXIS] {
    let mut out = [(0.0, 0.0); SS_AXIS * SS_AXIS];
    let mut i = 0;
    while i < SS_AXIS * SS_AXIS {
        let (x, y) = (i % SS_AXIS, i / SS_AXIS);
        out[i] = ((x as f64 + 0.5) / SS_AXIS as f64, (y as f64 + 0.5) / SS_AXIS as f64);
        i += 1;
    }
    out
}

fn draw_shape(frame: &mut FrameBuffer, s: &ShapeSpec) {
    let (w, h) = frame.dims();
    let sil = Silhouette::new(s.kind, s.size);
    let x0 = (s.center[0] - s.size).floor().max(0.0) as usize;
    let y0 = (s.center[1] - s.size).floor().max(0.0) as usize;
    let x1 = ((s.center[0] + s.size).ceil().max(0.0) as usize).min(w);
    let y1 = ((s.center[1] + s.size).ceil().max(0.0) as usize).min(h);
    for py in y0..y1 {
        for px in x0..x1 {
            let a = sil.coverage(px as f64 - s.center[0], py as f64 - s.center[1], 1.0);
            if a == 0.0 {
                continue;
            }
            let color = match &s.texture {
                Some(t) => t.modulate(s.color, px as f64 + 0.5 - s.center[0], py as f64 + 0.5 - s.center[1]),
                None => s.color,
            };
            frame.blend_pixel(px, py, color, a);
        }
    }
}

fn background_frame(scene: &SceneSpec2D) -> FrameBuffer {
    let (w, h) = scene.canvas;
    match &scene.background_texture {
        None => FrameBuffer::filled(w, h, scene.background),
        Some(t) => {
            let mut f = FrameBuffer::zeros(w, h);
            for y in 0..h {
                for x in 0..w {
                    f.set_pixel(x, y, t.modulate(scene.background, x as f64 + 0.5, y as f64 + 0.5));
                }
            }
            f
        }
    }
}

/// Rasterizes the scene at time `t`, shapes painted in list order.
pub fn render_sharp(scene: &SceneSpec2D, t: f64) -> FrameBuffer {
    let moved = advance(scene, t);
    let mut frame = background_frame(&moved);
    for s in &moved.shapes {
        draw_shape(&mut frame, s);
    }
    frame
}

pub const DEFAULT_SUBFRAMES: usize = 32;

/// Mean of `subframes` sharp renders at `t + i * exposure / subframes`.
pub fn render_motion_blur(
    scene: &SceneSpec2D,
    t: f64,
    exposure: f64,
    subframes: usize,
) -> Result<FrameBuffer> {
    if !(exposure >= 0.0 && exposure.is_finite()) {
        return Err(Error::Domain(format!("exposure {exposure} must be >= 0")));
    }
    if subframes < 1 {
        return Err(Error::Domain("subframes must be >= 1".into()));
    }
    if exposure == 0.0 || subframes == 1 || is_static(scene) {
        return Ok(render_sharp(scene, t));
    }
    let (w, h) = scene.canvas;
    let mut acc = FrameBuffer::zeros(w, h);
    let step = exposure / subframes as f64;
    for i in 0..subframes {
        acc.add_assign(&render_sharp(scene, t + i as f64 * step));
    }
    acc.scale(1.0 / subframes as f64);
    Ok(acc)
}
