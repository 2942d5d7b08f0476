//! Fluoroscopy-like images rendered from posed implant silhouettes, with the
//! degradations that make real frames hard to segment.

mod compose;
mod dataset;
mod scenario;

pub use compose::{compose_image, gaussian_blur, BACKGROUND_LEVEL, IMPLANT_LEVEL, NOISE_SPAN};
pub use dataset::{generate_dataset, render_flexion_sweep, render_scene, KneePose, PoseSampler, SceneGeometry, SynthPart, SynthSample};
pub use scenario::{ScenarioClass, ScenarioMix, ScenarioSpec, Subscreen};
