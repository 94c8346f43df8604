//! Procedural synthetic datasets for the three camera effects.

pub mod color;
pub mod dataset;
pub mod dof;
pub mod frame;
pub mod scene2d;
pub mod texture;

pub use color::{accumulate_frames, apply_white_balance};
pub use dataset::{
    build_dataset, generate_samples, plan_entries, render_entry, render_shutter_clip, ClipSample,
    DatasetManifest, Effect, EntryPlan, ForgeConfig, ManifestEntry, ShutterTimeline,
};
pub use dof::{coc_radius, random_scene_3d, render_dof, DofParams, Object3D, ObjectKind, SceneSpec3D};
pub use frame::FrameBuffer;
pub use scene2d::{
    advance, random_scene_2d, render_motion_blur, render_sharp, SceneParams2D, SceneSpec2D,
    SceneStyle, ShapeKind, ShapeSpec,
};
pub use texture::NoiseTexture;
