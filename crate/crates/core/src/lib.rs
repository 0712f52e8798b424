//! Event-camera 6-DOF tracking against 3D Gaussian splat maps.
//!
//! A keyframe of accumulated events is registered against the difference of
//! two log-intensity renders taken at the boundaries of the accumulation
//! interval. The boundary poses are extrapolated from a central keyframe pose
//! with a constant-velocity model, so both the pose and the first-order
//! dynamics are optimized, using analytic camera Jacobians and a staggered
//! coarse-to-fine scheme.
//!
//! Module map:
//!
//! - [`gaussian_map`]: splat primitives, PLY I/O, spherical harmonics, synthetic scenes.
//! - [`rasterizer`]: tile-based forward rendering and camera-space backward pass.
//! - [`events`]: event stream parsing and adaptive keyframe accumulation.
//! - [`motion`]: keyframe state, boundary poses and the extended transform.
//! - [`jacobians`]: pose and velocity derivatives, gradient contraction.
//! - [`tracker`]: loss, preprocessing and the two optimization stages.
//! - [`simulator`]: trajectories and frame-differencing event synthesis.
//! - [`evaluation`]: TUM I/O, first-pose alignment and ATE.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod events;
pub mod gaussian_map;
pub mod image_io;
pub mod jacobians;
pub mod motion;
pub mod rasterizer;
pub mod simulator;
pub mod tracker;
pub mod trajectory;

pub use error::{Error, Result};
