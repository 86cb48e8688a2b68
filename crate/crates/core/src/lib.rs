//! Differentiable 4D Gaussian splatting on the CPU.
//!
//! A scene is a cloud of space-time Gaussians. Rendering slices each one at
//! the camera timestamp, projects the resulting 3D Gaussian to the image and
//! composites the footprints front to back. Every step has an analytic
//! adjoint so the cloud can be fitted to posed RGB-D video.

pub mod appearance;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod render;
pub mod trainer;

pub use error::{CheckpointError, Error, Result};
