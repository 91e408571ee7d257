//! Docking-port detection and monocular 6-DoF pose estimation.
//!
//! The pipeline filters a frame into ring and reflector masks, fits an
//! ellipse to the skeletonized ring, recovers position and two candidate
//! normals from the ellipse, and resolves the remaining yaw (and the normal
//! ambiguity) by correlating the reflector mask with the projected port model.

// `!(x > 0.0)` is used deliberately so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod ellipse;
pub mod eval;
pub mod events;
pub mod filters;
pub mod geometry;
pub mod pose;
pub mod raster;
pub mod synth;

pub use geometry::{CameraIntrinsics, PortModel, PortPose, UnitRay};
