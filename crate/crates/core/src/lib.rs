//! Differentiable Gaussian-splatting engine that reconstructs a sharp
//! static + dynamic scene and refines camera poses jointly from
//! motion-blurred observations.
//!
//! Camera and object motion are both expressed as rigid transforms applied
//! to the Gaussian primitives themselves, so the exposure-time trajectory is
//! rendered from a single fixed reference pose and averaged into the blurry
//! prediction, keeping every parameter (scene and pose) inside one
//! differentiable forward model.

pub mod blur;
pub mod cli;
pub mod data_synth;
pub mod err;
pub mod formats;
pub mod img;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod scene;
pub mod se3;

pub use err::{Error, Result};
