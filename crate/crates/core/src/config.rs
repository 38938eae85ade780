//! TOML configuration shared by every command.
//!
//! `[board]`, `[region]` and `[camera]` are mandatory; `[ga]`,
//! `[calibration]`, `[ransac]` and `[simulation]` fall back to defaults.

use crate::calib_opt::CalibrationSettings;
use crate::ga::GaConfig;
use crate::geom::{CameraIntrinsics, CameraModel, Distortion, EulerXYZ, RigidTransform, Vec3};
use crate::lidar_features::{BoardGeometry, RansacParams, RegionBounds};
use crate::sim::{ImageSize, LidarModel, PoseSampling, Scene};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub model: CameraModel,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// `k1, k2, p1, p2, k3` for pinhole, `k1..k4` for fisheye; trailing
    /// zeros may be omitted.
    #[serde(default)]
    pub distortion: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub runs: usize,
    pub seed: u64,
    pub rotation_bound_deg: f64,
    pub translation_bound: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let s = CalibrationSettings::default();
        Self { runs: s.runs, seed: 0, rotation_bound_deg: s.rotation_bound.to_degrees(), translation_bound: s.translation_bound }
    }
}

/// Ground truth and sensor model for generated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Lidar to camera Euler angles, radians.
    pub euler: [f64; 3],
    /// Lidar to camera translation, metres.
    pub translation: [f64; 3],
    pub lidar: LidarModel,
    pub poses: PoseSampling,
    /// Standard deviation of synthetic corner noise, pixels.
    pub pixel_noise: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let scene = Scene::default();
        let euler = crate::geom::rot_to_euler(&scene.extrinsics.rotation).expect("default truth is away from gimbal lock");
        Self {
            euler: euler.to_array(),
            translation: scene.extrinsics.translation.into(),
            lidar: LidarModel::default(),
            poses: PoseSampling::default(),
            pixel_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibConfig {
    pub board: BoardGeometry,
    pub region: RegionBounds,
    pub camera: CameraConfig,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub ransac: RansacParams,
    #[serde(default)]
    pub simulation: SimulationSection,
}

impl CalibConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml_string()?)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.board.validate().map_err(|e| invalid(format!("board: {e}")))?;
        self.region.validate().map_err(|e| invalid(format!("region: {e}")))?;
        self.intrinsics()?;
        if self.camera.width == 0 || self.camera.height == 0 {
            return Err(invalid("camera: image size must be positive".into()));
        }
        self.settings().validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.ransac.threshold > 0.0) || self.ransac.max_iters == 0 {
            return Err(invalid("ransac: threshold and max_iters must be positive".into()));
        }
        let sim = &self.simulation;
        if sim.lidar.beams < 2 || !(sim.lidar.vertical_fov_deg > 0.0) || !(sim.lidar.azimuth_step_deg > 0.0) {
            return Err(invalid("simulation.lidar: need at least 2 beams and positive angles".into()));
        }
        if !(sim.lidar.range_noise >= 0.0) || !(sim.pixel_noise >= 0.0) {
            return Err(invalid("simulation: noise must be non-negative".into()));
        }
        if !(sim.poses.tilt_min_deg <= sim.poses.tilt_max_deg) {
            return Err(invalid("simulation.poses: tilt_min_deg exceeds tilt_max_deg".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, ConfigError> {
        let c = &self.camera;
        let mut coeffs = c.distortion.clone();
        let full = match c.model {
            CameraModel::Pinhole => 5,
            CameraModel::Fisheye => 4,
        };
        if coeffs.len() > full {
            return Err(ConfigError::Invalid(format!("camera: {:?} takes at most {full} distortion coefficients", c.model)));
        }
        coeffs.resize(full, 0.0);
        let d = Distortion::from_coefficients(c.model, &coeffs).map_err(|e| ConfigError::Invalid(format!("camera: {e}")))?;
        CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, d).map_err(|e| ConfigError::Invalid(format!("camera: {e}")))
    }

    pub fn image_size(&self) -> ImageSize {
        ImageSize { width: self.camera.width, height: self.camera.height }
    }

    pub fn settings(&self) -> CalibrationSettings {
        CalibrationSettings {
            ga: GaConfig { seed: self.calibration.seed, ..self.ga },
            runs: self.calibration.runs,
            rotation_bound: self.calibration.rotation_bound_deg.to_radians(),
            translation_bound: self.calibration.translation_bound,
        }
    }

    pub fn true_extrinsics(&self) -> RigidTransform {
        RigidTransform::from_euler(EulerXYZ::from_slice(&self.simulation.euler), Vec3::from(self.simulation.translation))
    }

    pub fn scene(&self) -> Result<Scene, ConfigError> {
        Ok(Scene {
            extrinsics: self.true_extrinsics(),
            intrinsics: self.intrinsics()?,
            image: self.image_size(),
            lidar: self.simulation.lidar,
            board: self.board,
        })
    }

    /// Configuration matching [`Scene::default`] with a region in front of the lidar.
    pub fn example() -> Self {
        let scene = Scene::default();
        let k = scene.intrinsics;
        Self {
            board: scene.board,
            region: RegionBounds { x_min: 1.5, x_max: 4.5, y_min: -1.5, y_max: 1.5, z_min: -1.0, z_max: 1.0 },
            camera: CameraConfig {
                model: k.model(),
                fx: k.fx,
                fy: k.fy,
                cx: k.cx,
                cy: k.cy,
                distortion: k.distortion.coefficients(),
                width: scene.image.width,
                height: scene.image.height,
            },
            ga: GaConfig::default(),
            calibration: CalibrationSection::default(),
            ransac: RansacParams::default(),
            simulation: SimulationSection::default(),
        }
    }
}
