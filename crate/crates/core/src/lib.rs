//! Lidar to camera extrinsic calibration from a checkerboard target.
//!
//! The pipeline extracts the board centre and normal from each lidar scan
//! ([`lidar_features`]) and from the checkerboard corners detected in the
//! paired image ([`cam_features`]), then estimates the lidar to camera rigid
//! transform with a two-stage genetic algorithm ([`calib_opt`]). The
//! [`sim`] module generates synthetic scenes with known ground truth, and
//! [`study`] runs the noise and spread experiments on top of it.

// Negated comparisons are used on purpose so NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cam_features;
pub mod calib_opt;
pub mod config;
pub mod dataset;
pub mod ga;
pub mod geom;
pub mod io;
pub mod lidar_features;
pub mod overlay;
pub mod sim;
pub mod study;

pub use calib_opt::{calibrate, CalibrationResult, CalibrationSettings, Sample};
pub use geom::{CameraIntrinsics, EulerXYZ, Mat3, RigidTransform, Vec3};
