//! Layered thin-lens depth-of-field compositor.
//!
//! Objects are flat silhouettes at discrete depths. Each layer is blurred with
//! a disc whose radius is the circle of confusion at that depth, then layers
//! are composited back to front over a uniform wall.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frame::FrameBuffer;
use super::scene2d::{random_color, ShapeKind, Silhouette};
use crate::control::{map_log_centered, ControlScalar, LogRange};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Cube,
    Sphere,
    Cylinder,
    Cone,
    Pyramid,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 5] = [
        ObjectKind::Cube,
        ObjectKind::Sphere,
        ObjectKind::Cylinder,
        ObjectKind::Cone,
        ObjectKind::Pyramid,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object3D {
    pub kind: ObjectKind,
    pub color: [f64; 3],
    /// Meters from the camera.
    pub depth: f64,
    /// Screen-space centre in pixels.
    pub position: [f64; 2],
    /// Screen-space half extent in pixels.
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec3D {
    pub canvas: (usize, usize),
    pub wall: [f64; 3],
    pub objects: Vec<Object3D>,
    pub focus_depth: f64,
    /// Radians; `None` renders with flat ambient shading.
    pub light_azimuth: Option<f64>,
    pub seed: u64,
}

impl SceneSpec3D {
    pub fn focus_index(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.depth == self.focus_depth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofParams {
    pub canvas: (usize, usize),
    pub object_count: (usize, usize),
    pub d_min: f64,
    pub d_max: f64,
    /// Focal length in meters.
    pub focal_length: f64,
    /// Pixels per unit of the thin-lens CoC expression.
    pub kappa: f64,
    /// Half extent in pixels of an object placed at `d_min`.
    pub base_size: f64,
    pub with_light: bool,
}

impl Default for DofParams {
    fn default() -> Self {
        let mut p = Self {
            canvas: (512, 512),
            object_count: (2, 4),
            d_min: 1.0,
            d_max: 4.0,
            focal_length: 0.05,
            kappa: 1.0,
            base_size: 90.0,
            with_light: true,
        };
        p.kappa = p.calibrated_kappa(8.0, LogRange::default_fstop().lo);
        p
    }
}

impl DofParams {
    /// κ giving `target_px` blur for an object at `d_max` when focused at
    /// `d_min` with f-number `fstop`.
    pub fn calibrated_kappa(&self, target_px: f64, fstop: f64) -> f64 {
        let raw = coc_radius(self.d_max, self.d_min, fstop, self.focal_length, 1.0)
            .expect("default geometry is valid");
        target_px / raw
    }

    /// Same optics on another canvas; pixel quantities scale with its size.
    pub fn scaled_to(&self, canvas: (usize, usize)) -> Self {
        let s = canvas.0.min(canvas.1) as f64 / self.canvas.0.min(self.canvas.1) as f64;
        Self {
            canvas,
            kappa: self.kappa * s,
            base_size: self.base_size * s,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.object_count;
        if lo < 2 || hi > 4 || lo > hi {
            return Err(Error::Config(format!("object count ({lo}, {hi}) must lie in [2, 4]")));
        }
        if !(self.focal_length > 0.0 && self.d_min > self.focal_length && self.d_max > self.d_min) {
            return Err(Error::Config(format!(
                "need 0 < f < d_min < d_max, got f={} d_min={} d_max={}",
                self.focal_length, self.d_min, self.d_max
            )));
        }
        if !(self.kappa > 0.0 && self.base_size > 0.0) {
            return Err(Error::Config("kappa and base_size must be positive".into()));
        }
        if 2.0 * self.base_size >= self.canvas.0.min(self.canvas.1) as f64 {
            return Err(Error::Config("base_size too large for canvas".into()));
        }
        Ok(())
    }
}

/// Circle-of-confusion radius in pixels:
/// `κ · (f² / N) · |d − d_f| / (d · (d_f − f))`.
pub fn coc_radius(depth: f64, focus_depth: f64, fstop: f64, focal: f64, kappa: f64) -> Result<f64> {
    if depth <= focal || focus_depth <= focal {
        return Err(Error::Domain(format!(
            "depths must exceed the focal length {focal} m (got d={depth}, d_f={focus_depth})"
        )));
    }
    if fstop <= 0.0 {
        return Err(Error::Domain(format!("f-number {fstop} must be positive")));
    }
    Ok(kappa * (focal * focal / fstop) * (depth - focus_depth).abs()
        / (depth * (focus_depth - focal)))
}

pub fn random_scene_3d(seed: u64, params: &DofParams) -> Result<SceneSpec3D> {
    params.validate()?;
    let mut rng = rng::stream(seed, &[0x5ce3d]);
    let (w, h) = params.canvas;
    let n = rng.random_range(params.object_count.0..=params.object_count.1);
    // One depth per equal slot, so depths are distinct and ordered.
    let slot = (params.d_max - params.d_min) / n as f64;
    let mut objects = Vec::with_capacity(n);
    for i in 0..n {
        let depth = params.d_min + slot * (i as f64 + rng.random_range(0.05..0.95));
        let size = params.base_size * params.d_min / depth;
        let position = [
            rng.random_range(size..=(w as f64 - size)),
            rng.random_range(size..=(h as f64 - size)),
        ];
        objects.push(Object3D {
            kind: ObjectKind::ALL[rng.random_range(0..5)],
            color: random_color(&mut rng),
            depth,
            position,
            size,
        });
    }
    let g = rng.random_range(0.45..0.7);
    let tint = rng.random_range(-0.05..0.05);
    let light_azimuth = params
        .with_light
        .then(|| rng.random_range(0.0..std::f64::consts::TAU));
    let focus_depth = objects[0].depth;
    Ok(SceneSpec3D {
        canvas: params.canvas,
        wall: [g + tint, g, g - tint],
        objects,
        focus_depth,
        light_azimuth,
        seed,
    })
}

fn silhouette(kind: ObjectKind, size: f64) -> (Silhouette, f64) {
    // Cylinders are drawn as a taller, narrower box via an x-scale.
    match kind {
        ObjectKind::Cube => (Silhouette::new(ShapeKind::Square, size), 1.0),
        ObjectKind::Sphere => (Silhouette::new(ShapeKind::Circle, size), 1.0),
        ObjectKind::Cylinder => (Silhouette::new(ShapeKind::Square, size), 1.0 / 0.65),
        ObjectKind::Cone | ObjectKind::Pyramid => (Silhouette::new(ShapeKind::Triangle, size), 1.0),
    }
}

/// Premultiplied RGBA layer restricted to a bounding box.
struct Layer {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    rgba: Vec<[f64; 4]>,
}

fn rasterize_object(o: &Object3D, light: Option<f64>, canvas: (usize, usize), pad: usize) -> Layer {
    let (cw, ch) = canvas;
    let (sil, xscale) = silhouette(o.kind, o.size);
    let x0 = ((o.position[0] - o.size).floor() as isize - pad as isize).max(0) as usize;
    let y0 = ((o.position[1] - o.size).floor() as isize - pad as isize).max(0) as usize;
    let x1 = (((o.position[0] + o.size).ceil() as usize) + pad).min(cw);
    let y1 = (((o.position[1] + o.size).ceil() as usize) + pad).min(ch);
    let (w, h) = (x1.saturating_sub(x0), y1.saturating_sub(y0));
    let mut rgba = vec![[0.0; 4]; w * h];
    let dir = light.map(|a| [a.cos(), a.sin()]);
    for ly in 0..h {
        for lx in 0..w {
            let (px, py) = ((x0 + lx) as f64, (y0 + ly) as f64);
            let a = sil.coverage(px - o.position[0], py - o.position[1], xscale);
            if a == 0.0 {
                continue;
            }
            let (nx, ny) = (
                (px + 0.5 - o.position[0]) / o.size,
                (py + 0.5 - o.position[1]) / o.size,
            );
            let mut shade = match dir {
                Some([lx_, ly_]) => 0.8 + 0.2 * (nx * lx_ + ny * ly_).clamp(-1.0, 1.0),
                None => 0.85,
            };
            match o.kind {
                ObjectKind::Sphere => shade *= 1.0 - 0.25 * (nx * nx + ny * ny).min(1.0),
                ObjectKind::Pyramid if nx > 0.0 => shade *= 0.8,
                ObjectKind::Cube if ny < -0.6 => shade *= 1.15,
                _ => {}
            }
            let c = o.color.map(|v| (v * shade).clamp(0.0, 1.0));
            rgba[ly * w + lx] = [c[0] * a, c[1] * a, c[2] * a, a];
        }
    }
    Layer { x0, y0, w, h, rgba }
}

fn disc_kernel(radius: f64) -> (isize, Vec<(isize, isize, f64)>) {
    let reach = radius.ceil() as isize + 1;
    let mut taps = Vec::new();
    let mut total = 0.0;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            let wgt = (radius + 0.5 - d).clamp(0.0, 1.0);
            if wgt > 0.0 {
                taps.push((dx, dy, wgt));
                total += wgt;
            }
        }
    }
    for t in &mut taps {
        t.2 /= total;
    }
    (reach, taps)
}

fn blur_layer(layer: &Layer, radius: f64) -> Layer {
    if radius == 0.0 {
        return Layer {
            rgba: layer.rgba.clone(),
            ..*layer
        };
    }
    let (_, taps) = disc_kernel(radius);
    let (w, h) = (layer.w as isize, layer.h as isize);
    let mut out = vec![[0.0; 4]; layer.rgba.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 4];
            for &(dx, dy, wgt) in &taps {
                let (sx, sy) = (x + dx, y + dy);
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                let p = layer.rgba[(sy * w + sx) as usize];
                for k in 0..4 {
                    acc[k] += wgt * p[k];
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Layer {
        rgba: out,
        ..*layer
    }
}

fn composite(frame: &mut FrameBuffer, layer: &Layer) {
    for ly in 0..layer.h {
        for lx in 0..layer.w {
            let p = layer.rgba[ly * layer.w + lx];
            if p[3] == 0.0 {
                continue;
            }
            let (x, y) = (layer.x0 + lx, layer.y0 + ly);
            let under = frame.pixel(x, y);
            frame.set_pixel(
                x,
                y,
                [
                    p[0] + (1.0 - p[3]) * under[0],
                    p[1] + (1.0 - p[3]) * under[1],
                    p[2] + (1.0 - p[3]) * under[2],
                ],
            );
        }
    }
}

/// Blur radius of every object for the given f-number, in scene order.
pub fn object_blur_radii(scene: &SceneSpec3D, fstop: f64, params: &DofParams) -> Result<Vec<f64>> {
    scene
        .objects
        .iter()
        .map(|o| coc_radius(o.depth, scene.focus_depth, fstop, params.focal_length, params.kappa))
        .collect()
}

pub fn render_dof_fstop(scene: &SceneSpec3D, fstop: f64, params: &DofParams) -> Result<FrameBuffer> {
    let radii = object_blur_radii(scene, fstop, params)?;
    let (w, h) = scene.canvas;
    let mut frame = FrameBuffer::filled(w, h, scene.wall);
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by(|&a, &b| scene.objects[b].depth.total_cmp(&scene.objects[a].depth));
    for i in order {
        let r = radii[i];
        let layer = rasterize_object(&scene.objects[i], scene.light_azimuth, scene.canvas, r.ceil() as usize + 1);
        composite(&mut frame, &blur_layer(&layer, r));
    }
    Ok(frame)
}

/// Renders with f-number `map_log_centered(c, fstop_range)`.
pub fn render_dof(
    scene: &SceneSpec3D,
    c: ControlScalar,
    fstop_range: LogRange,
    params: &DofParams,
) -> Result<FrameBuffer> {
    render_dof_fstop(scene, map_log_centered(c, fstop_range)?, params)
}

/// Pixels fully covered by the object at `index` (all subsamples inside).
pub fn object_mask(scene: &SceneSpec3D, index: usize) -> Vec<bool> {
    let (w, h) = scene.canvas;
    let layer = rasterize_object(&scene.objects[index], None, scene.canvas, 0);
    let mut mask = vec![false; w * h];
    for ly in 0..layer.h {
        for lx in 0..layer.w {
            if layer.rgba[ly * layer.w + lx][3] == 1.0 {
                mask[(layer.y0 + ly) * w + layer.x0 + lx] = true;
            }
        }
    }
    mask
}
