//! Noise-robust planar control-point configurations for camera pose
//! estimation.
//!
//! The library finds marker point layouts that make homography-based pose
//! estimation robust to image noise by minimizing the condition number of
//! the stacked linear system, and ships a synthetic-camera Monte-Carlo
//! harness quantifying the accuracy gains.
//!
//! Modules, bottom up:
//! - [`geometry`]: projection, coordinate conversions, homographies,
//!   rotations.
//! - [`dlt`]: the stacked system, its SVD, condition numbers, perturbation
//!   analysis and error bounds.
//! - [`optimizer`]: projected gradient descent with adaptive per-coordinate
//!   steps over the control-point positions.
//! - [`pose_est`]: homography decomposition, reprojection-error refinement
//!   and the error metrics.
//! - [`simulation`]: pose distributions, noise injection, Monte-Carlo
//!   statistics, sweeps and histograms.
//! - [`cli`]: experiment configuration files and the command entry points.

pub mod cli;
pub mod dlt;
pub mod error;
pub mod geometry;
pub mod optimizer;
pub mod pose_est;
pub mod simulation;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
