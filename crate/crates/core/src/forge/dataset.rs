use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::color::apply_white_balance;
use super::dof::{random_scene_3d, render_dof, DofParams};
use super::frame::FrameBuffer;
use super::scene2d::{
    random_scene_2d, render_motion_blur, render_sharp, SceneParams2D, SceneSpec2D, SceneStyle,
    DEFAULT_SUBFRAMES,
};
use crate::control::{
    map_exposure, map_kelvin, map_log_centered, pyramid_sample, ControlScalar, KelvinRange,
    LogRange, PyramidPlan, SampledCondition,
};
use crate::error::{Error, Result};
use crate::rng;

pub const GENERATOR_VERSION: &str = concat!("camforge-forge/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Shutter,
    Aperture,
    Temperature,
}

impl Effect {
    pub const ALL: [Effect; 3] = [Effect::Shutter, Effect::Aperture, Effect::Temperature];

    pub fn as_str(self) -> &'static str {
        match self {
            Effect::Shutter => "shutter",
            Effect::Aperture => "aperture",
            Effect::Temperature => "temperature",
        }
    }

    /// Unit of the physical value: exposure seconds, f-number, Kelvin.
    pub fn unit(self) -> &'static str {
        match self {
            Effect::Shutter => "s",
            Effect::Aperture => "f",
            Effect::Temperature => "K",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Effect::Shutter => 1,
            Effect::Aperture => 2,
            Effect::Temperature => 3,
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Effect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shutter" => Ok(Effect::Shutter),
            "aperture" => Ok(Effect::Aperture),
            "temperature" => Ok(Effect::Temperature),
            other => Err(Error::Config(format!(
                "unknown effect '{other}' (expected shutter, aperture or temperature)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub frames: Vec<FrameBuffer>,
    pub condition: SampledCondition,
    pub physical_value: f64,
    pub unit: &'static str,
    pub scene_id: String,
    pub effect: Effect,
}

/// Timeline for shutter clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShutterTimeline {
    pub n_frames: usize,
    /// Output frame rate; fixes timestamps independently of exposure.
    pub output_fps: f64,
    pub subframes: usize,
}

impl Default for ShutterTimeline {
    fn default() -> Self {
        Self {
            n_frames: 16,
            output_fps: 8.0,
            subframes: DEFAULT_SUBFRAMES,
        }
    }
}

impl ShutterTimeline {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.subframes == 0 {
            return Err(Error::Config("n_frames and subframes must be >= 1".into()));
        }
        if !(self.output_fps > 0.0 && self.output_fps.is_finite()) {
            return Err(Error::Config(format!("output fps {} invalid", self.output_fps)));
        }
        Ok(())
    }

    pub fn timestamp(&self, j: usize) -> f64 {
        j as f64 / self.output_fps
    }

    /// Start of the exposure window for frame `j`, placed so the mean
    /// sub-frame time equals the frame timestamp.
    pub fn window_start(&self, j: usize, exposure: f64) -> f64 {
        let s = self.subframes as f64;
        self.timestamp(j) - exposure * (s - 1.0) / (2.0 * s)
    }
}

pub fn scene_id(seed: u64) -> String {
    format!("{seed:016x}")
}

pub fn render_shutter_clip(
    scene: &SceneSpec2D,
    c: ControlScalar,
    timeline: &ShutterTimeline,
    fps_range: LogRange,
) -> Result<ClipSample> {
    timeline.validate()?;
    let exposure = map_exposure(c, fps_range)?;
    let frames = (0..timeline.n_frames)
        .map(|j| {
            render_motion_blur(
                scene,
                timeline.window_start(j, exposure),
                exposure,
                timeline.subframes,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipSample {
        frames,
        condition: SampledCondition {
            layer_index: 0,
            bin_index: 0,
            c,
        },
        physical_value: exposure,
        unit: Effect::Shutter.unit(),
        scene_id: scene_id(scene.seed),
        effect: Effect::Shutter,
    })
}

/// Everything needed to turn a pyramid plan into rendered samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub effect: Effect,
    pub plan: PyramidPlan,
    pub scenes_per_layer: usize,
    pub canvas: (usize, usize),
    #[serde(default)]
    pub style: SceneStyle,
    pub timeline: ShutterTimeline,
    pub fps_range: LogRange,
    pub fstop_range: LogRange,
    pub kelvin_range: KelvinRange,
    pub preserve_luma: bool,
}

impl ForgeConfig {
    pub fn new(effect: Effect) -> Self {
        Self {
            effect,
            plan: PyramidPlan::default(),
            scenes_per_layer: 6,
            canvas: (512, 512),
            style: SceneStyle::Primitives,
            timeline: ShutterTimeline::default(),
            fps_range: LogRange::default_fps(),
            fstop_range: LogRange::default_fstop(),
            kelvin_range: KelvinRange::default(),
            preserve_luma: true,
        }
    }

    /// One scene rendered at `n` conditions.
    pub fn one_shot(effect: Effect, n: usize) -> Self {
        Self {
            plan: PyramidPlan::one_shot(n, 0),
            scenes_per_layer: 1,
            ..Self::new(effect)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.scenes_per_layer == 0 {
            return Err(Error::Config("scenes_per_layer must be >= 1".into()));
        }
        self.timeline.validate()?;
        self.fps_range.validate()?;
        self.fstop_range.validate()?;
        self.kelvin_range.validate()?;
        self.scene_params().validate()?;
        self.dof_params().validate()
    }

    pub fn scene_params(&self) -> SceneParams2D {
        let base = match self.effect {
            Effect::Temperature => SceneParams2D::temperature_default(),
            _ => SceneParams2D::default(),
        };
        SceneParams2D {
            style: self.style,
            ..base.scaled_to(self.canvas)
        }
    }

    pub fn dof_params(&self) -> DofParams {
        DofParams::default().scaled_to(self.canvas)
    }

    pub fn frames_per_sample(&self) -> usize {
        match self.effect {
            Effect::Shutter => self.timeline.n_frames,
            _ => 1,
        }
    }
}

/// One (scene, condition) pair scheduled for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryPlan {
    pub scene_id: String,
    pub scene_seed: u64,
    pub condition: SampledCondition,
}

/// Fresh scenes per layer, each crossed with all of that layer's conditions.
pub fn plan_entries(cfg: &ForgeConfig) -> Result<Vec<EntryPlan>> {
    cfg.validate()?;
    let conds = pyramid_sample(&cfg.plan)?;
    let mut out = Vec::with_capacity(cfg.plan.total() * cfg.scenes_per_layer);
    for (layer, _) in cfg.plan.layer_counts.iter().enumerate() {
        for s in 0..cfg.scenes_per_layer {
            let scene_seed =
                rng::derive_seed(cfg.plan.rng_seed, &[cfg.effect.tag(), layer as u64, s as u64]);
            for cond in conds.iter().filter(|c| c.layer_index == layer) {
                out.push(EntryPlan {
                    scene_id: format!("l{layer}s{s}"),
                    scene_seed,
                    condition: *cond,
                });
            }
        }
    }
    Ok(out)
}

pub fn render_entry(cfg: &ForgeConfig, entry: &EntryPlan) -> Result<ClipSample> {
    let c = entry.condition.c;
    let (frames, physical_value) = match cfg.effect {
        Effect::Shutter => {
            let scene = random_scene_2d(entry.scene_seed, &cfg.scene_params())?;
            let clip = render_shutter_clip(&scene, c, &cfg.timeline, cfg.fps_range)?;
            (clip.frames, clip.physical_value)
        }
        Effect::Aperture => {
            let params = cfg.dof_params();
            let scene = random_scene_3d(entry.scene_seed, &params)?;
            let n = map_log_centered(c, cfg.fstop_range)?;
            (vec![render_dof(&scene, c, cfg.fstop_range, &params)?], n)
        }
        Effect::Temperature => {
            let scene = random_scene_2d(entry.scene_seed, &cfg.scene_params())?;
            let k = map_kelvin(c, cfg.kelvin_range)?;
            let reference = render_sharp(&scene, 0.0);
            (
                vec![apply_white_balance(&reference, k, &cfg.kelvin_range, cfg.preserve_luma)?],
                k,
            )
        }
    };
    Ok(ClipSample {
        frames,
        condition: entry.condition,
        physical_value,
        unit: cfg.effect.unit(),
        scene_id: entry.scene_id.clone(),
        effect: cfg.effect,
    })
}

/// Renders every planned entry in memory. Intended for small canvases.
pub fn generate_samples(cfg: &ForgeConfig) -> Result<Vec<ClipSample>> {
    plan_entries(cfg)?
        .par_iter()
        .map(|e| render_entry(cfg, e))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub layer: usize,
    pub c: f64,
    pub physical_value: f64,
    pub unit: String,
    pub paths: Vec<String>,
    pub n_frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub effect: Effect,
    pub generator_version: String,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "dataset-manifest.json";

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Distinct scene seeds in first-seen order.
    pub fn scene_seeds(&self) -> Vec<u64> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.seed) {
                seen.push(e.seed);
            }
        }
        seen
    }
}

fn entry_dir(entry: &EntryPlan) -> String {
    format!(
        "{}/b{:02}",
        entry.scene_id, entry.condition.bin_index
    )
}

/// Renders all entries to `out_dir` as PNG sequences and writes the manifest.
pub fn build_dataset(cfg: &ForgeConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let plan = plan_entries(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = plan
        .par_iter()
        .map(|entry| {
            let sample = render_entry(cfg, entry)?;
            let rel = entry_dir(entry);
            let dir = out_dir.join(&rel);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut paths = Vec::with_capacity(sample.frames.len());
            for (i, f) in sample.frames.iter().enumerate() {
                let name = format!("frame_{i:04}.png");
                f.save_png(&dir.join(&name))?;
                paths.push(format!("{rel}/{name}"));
            }
            log::debug!("rendered {rel}");
            Ok(ManifestEntry {
                scene_id: entry.scene_id.clone(),
                layer: entry.condition.layer_index,
                c: entry.condition.c.value(),
                physical_value: sample.physical_value,
                unit: sample.unit.to_string(),
                n_frames: paths.len(),
                paths,
                seed: entry.scene_seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        effect: cfg.effect,
        generator_version: GENERATOR_VERSION.to_string(),
        entries,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn load_entry_frames(root: &Path, entry: &ManifestEntry) -> Result<Vec<FrameBuffer>> {
    entry
        .paths
        .iter()
        .map(|p| FrameBuffer::load_png(&root.join(p)))
        .collect()
}

/// Resolves manifest-relative paths.
pub fn entry_paths(root: &Path, entry: &ManifestEntry) -> Vec<PathBuf> {
    entry.paths.iter().map(|p| root.join(p)).collect()
}
