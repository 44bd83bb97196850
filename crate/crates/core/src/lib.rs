//! Mesh-bound Gaussian-splat head avatars.
//!
//! The pipeline: a linear parametric head ([`head_model`]) poses a mesh, Gaussians
//! rigged to its triangles ([`binding`]) follow it, a tile renderer
//! ([`rasterizer`]) draws them, [`fitter`] optimizes the avatar and per-frame head
//! parameters against images, [`audio2param`] predicts jaw and expression from
//! audio features, and [`stability`] scores keypoint trajectories for temporal
//! wobble.

pub mod audio2param;
pub mod binding;
pub mod codecs;
pub mod error;
pub mod fitter;
pub mod gaussian_scene;
pub mod geometry;
pub mod head_model;
pub mod par;
pub mod rasterizer;
pub mod stability;
pub mod synth;

pub use error::{Error, Result};
