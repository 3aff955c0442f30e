//! Orientation from a static-field compass, subpixel translation recovery and
//! k-space rigid-motion correction, all driven by synthetic data.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: SO(3) primitives and the NED/DCS frame permutation.
//! - [`sensor_sim`]: forward models for accelerometer, magnetometer and gyroscope streams.
//! - [`calibration`]: internal and cross-sensor misalignment solvers.
//! - [`compass`]: integration-free orientation from one accel + mag sample, plus the
//!   gyro and double-integration baselines.
//! - [`drift`]: seed-averaged gyro-versus-compass drift experiment.
//! - [`error_analysis`]: first-order error propagation and residual metrics.
//! - [`phase_correlation`]: 2D/3D subpixel shift estimation and slice-to-volume localisation.
//! - [`kspace`]: direct non-uniform DFT acquisition, motion corruption/correction and scoring.
//! - [`io`]: CSV, volume, shot and calibration file formats.

pub mod calibration;
pub mod compass;
pub mod drift;
pub mod error;
pub mod error_analysis;
pub mod geometry;
pub mod io;
pub mod kspace;
pub mod lsq;
pub mod phase_correlation;
pub mod sensor_sim;
pub mod spline;

pub use error::{Error, Result};
pub use geometry::{RigidMotion, Rot3, Vec3};
