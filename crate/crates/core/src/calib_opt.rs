//! Lidar to camera extrinsics from paired board features.
//!
//! A closed-form least-squares rotation from the board normals seeds a
//! rotation-only GA; the centre residual mean then seeds a joint GA over
//! rotation and translation inside a small box around the seed. The whole
//! optimization is repeated and averaged because the GA is stochastic.

use crate::cam_features::BoardCamFeatures;
use crate::ga::{ga_minimize, GaConfig};
use crate::geom::{
    angle_between, chordal_mean, euler_to_rot, rot_to_euler, CameraIntrinsics, EulerXYZ, GeomError, Mat3,
    RigidTransform, Vec3,
};
use crate::lidar_features::BoardLidarFeatures;
use log::warn;
use nalgebra::Matrix3xX;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Paired board observations needed before the extrinsics are observable.
pub const MIN_SAMPLES: usize = 3;
/// Fitness assigned when a candidate puts a board centre behind the camera.
pub const BEHIND_CAMERA_PENALTY: f64 = 1e6;
const MAX_NORMAL_CONDITION: f64 = 1e8;
const SIMILAR_NORMALS_DEG: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("{0} samples given; calibration needs a minimum of 3 checkerboard poses")]
    TooFewSamples(usize),
    #[error("board normals are nearly coplanar (condition number {0:.3e}); collect poses with more varied board orientations")]
    DegenerateNormals(f64),
    #[error("sample {0}: pixel length must be positive")]
    InvalidSample(usize),
    #[error("board centre of sample {0} is behind the camera")]
    BehindCamera(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("invalid settings: {0}")]
    Settings(String),
}

/// One paired camera/lidar observation of the board.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub lidar: BoardLidarFeatures,
    pub cam: BoardCamFeatures,
    /// Metres per pixel near the board centre: square side over its pixel length.
    pub metres_per_pixel: f64,
}

impl Sample {
    pub fn new(lidar: BoardLidarFeatures, cam: BoardCamFeatures, square: f64) -> Result<Self, CalibError> {
        if !(cam.pixel_length > 0.0) || !(square > 0.0) {
            return Err(CalibError::InvalidSample(0));
        }
        Ok(Self { lidar, cam, metres_per_pixel: square / cam.pixel_length })
    }
}

/// Column-stacked normals and centres, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrices {
    pub normals_lidar: Matrix3xX<f64>,
    pub normals_cam: Matrix3xX<f64>,
    pub centres_lidar: Matrix3xX<f64>,
    pub centres_cam: Matrix3xX<f64>,
}

impl FeatureMatrices {
    pub fn from_samples(samples: &[Sample]) -> Self {
        let cols = |f: &dyn Fn(&Sample) -> Vec3| {
            Matrix3xX::from_columns(&samples.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            normals_lidar: cols(&|s| s.lidar.normal),
            normals_cam: cols(&|s| s.cam.normal),
            centres_lidar: cols(&|s| s.lidar.centre),
            centres_cam: cols(&|s| s.cam.centre),
        }
    }

    pub fn len(&self) -> usize {
        self.normals_lidar.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Least-squares rotation taking lidar normals onto camera normals,
/// `((N_l N_l^T)^-1 (N_l N_c^T))^T`, projected onto SO(3).
pub fn init_rotation(f: &FeatureMatrices) -> Result<Mat3, CalibError> {
    let nl = &f.normals_lidar;
    let a: Mat3 = nl * nl.transpose();
    let eig = a.symmetric_eigen();
    let (lmax, lmin) = (eig.eigenvalues.max(), eig.eigenvalues.min());
    let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if cond >= MAX_NORMAL_CONDITION {
        return Err(CalibError::DegenerateNormals(cond));
    }
    let inv = a.try_inverse().ok_or(CalibError::DegenerateNormals(cond))?;
    let b: Mat3 = nl * f.normals_cam.transpose();
    Ok(crate::geom::project_to_so3(&(inv * b).transpose())?)
}

/// `e_d`: mean squared dot product between the camera-frame in-plane vector
/// `o_c - corner_1` and the rotated lidar normal.
pub fn plane_orthogonality(r: &Mat3, samples: &[Sample]) -> f64 {
    samples
        .iter()
        .map(|s| (s.cam.centre - s.cam.corners[0]).dot(&(r * s.lidar.normal)).powi(2))
        .sum::<f64>()
        / samples.len() as f64
}

/// `e_r`: mean distance between rotated lidar normals and camera normals.
pub fn normal_alignment(r: &Mat3, samples: &[Sample]) -> f64 {
    samples.iter().map(|s| (r * s.lidar.normal - s.cam.normal).norm()).sum::<f64>() / samples.len() as f64
}

/// Rotation-stage fitness `e_d + e_r`.
pub fn fitness_rotation(r: &Mat3, samples: &[Sample]) -> f64 {
    plane_orthogonality(r, samples) + normal_alignment(r, samples)
}

/// Row-wise mean of `O_c - R O_l`.
pub fn init_translation(f: &FeatureMatrices, r: &Mat3) -> Vec3 {
    let resid = &f.centres_cam - r * &f.centres_lidar;
    resid.column_mean()
}

/// Components of the joint fitness, all in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FitnessBreakdown {
    pub e_d: f64,
    pub e_r: f64,
    pub e_t: f64,
    pub v_t: f64,
    /// Largest centre reprojection error, each converted to metres with its
    /// own sample's pixel scale.
    pub e_ti_metres: f64,
    pub total: f64,
}

pub fn fitness_breakdown(
    r: &Mat3,
    t: &Vec3,
    samples: &[Sample],
    k: &CameraIntrinsics,
) -> Result<FitnessBreakdown, CalibError> {
    let n = samples.len() as f64;
    let mut dists = Vec::with_capacity(samples.len());
    let mut e_ti_metres: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let o_lc = r * s.lidar.centre + t;
        dists.push((s.cam.centre - o_lc).norm());
        let p_l = k.project(&o_lc).map_err(|_| CalibError::BehindCamera(i))?;
        let p_c = k.project(&s.cam.centre).map_err(|_| CalibError::BehindCamera(i))?;
        if o_lc.z <= 0.0 {
            return Err(CalibError::BehindCamera(i));
        }
        e_ti_metres = e_ti_metres.max((p_l - p_c).norm() * s.metres_per_pixel);
    }
    let e_t = dists.iter().sum::<f64>() / n;
    let v_t = dists.iter().map(|d| (d - e_t).powi(2)).sum::<f64>() / n;
    let e_d = plane_orthogonality(r, samples);
    let e_r = normal_alignment(r, samples);
    Ok(FitnessBreakdown { e_d, e_r, e_t, v_t, e_ti_metres, total: e_t + v_t + e_d + e_r + e_ti_metres })
}

/// Joint fitness `e_t + v_t + e_d + e_r + k e_tI`; candidates that put a
/// centre behind the camera score [`BEHIND_CAMERA_PENALTY`].
pub fn fitness_joint(r: &Mat3, t: &Vec3, samples: &[Sample], k: &CameraIntrinsics) -> f64 {
    fitness_breakdown(r, t, samples, k).map_or(BEHIND_CAMERA_PENALTY, |b| b.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    pub ga: GaConfig,
    /// Independent optimizations averaged into the final estimate.
    pub runs: usize,
    /// Half-width of the Euler-angle search box, radians.
    pub rotation_bound: f64,
    /// Half-width of the translation search box, metres.
    pub translation_bound: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { ga: GaConfig::default(), runs: 10, rotation_bound: PI / 18.0, translation_bound: 0.05 }
    }
}

impl CalibrationSettings {
    pub fn validate(&self) -> Result<(), CalibError> {
        self.ga.validate().map_err(CalibError::Settings)?;
        if self.runs == 0 {
            return Err(CalibError::Settings("run count must be at least 1".into()));
        }
        if !(self.rotation_bound > 0.0 && self.translation_bound > 0.0) {
            return Err(CalibError::Settings("search bounds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub extrinsics: RigidTransform,
    /// Optimized genes of the joint stage.
    pub euler: EulerXYZ,
    pub translation: Vec3,
    /// Centre of the joint-stage search box.
    pub seed_euler: EulerXYZ,
    pub seed_translation: Vec3,
    pub rotation_fitness: f64,
    pub joint_fitness: f64,
    pub rotation_history: usize,
    pub joint_history: usize,
    pub history_non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub extrinsics: RigidTransform,
    pub euler: EulerXYZ,
    pub runs: Vec<RunResult>,
    pub fitness: FitnessBreakdown,
    pub warnings: Vec<String>,
}

/// SplitMix64 step: decorrelated seeds for each run and stage.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn boxed(centre: &[f64], half: &[f64]) -> Vec<(f64, f64)> {
    centre.iter().zip(half).map(|(c, h)| (c - h, c + h)).collect()
}

fn non_increasing(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[1] <= w[0])
}

/// One rotation-then-joint optimization.
fn run_once(
    samples: &[Sample],
    f: &FeatureMatrices,
    seed_rotation: &Mat3,
    settings: &CalibrationSettings,
    k: &CameraIntrinsics,
    run: usize,
) -> Result<RunResult, CalibError> {
    let rb = settings.rotation_bound;
    let tb = settings.translation_bound;

    let theta0 = rot_to_euler(seed_rotation)?.to_array();
    let rot_cfg = GaConfig { seed: derive_seed(settings.ga.seed, 2 * run as u64), ..settings.ga };
    let rot = ga_minimize(
        |g| fitness_rotation(&euler_to_rot(EulerXYZ::from_slice(g)), samples),
        &boxed(&theta0, &[rb; 3]),
        &rot_cfg,
        &[theta0.to_vec()],
    );
    let theta1 = EulerXYZ::from_slice(&rot.best);
    let r1 = euler_to_rot(theta1);
    let t1 = init_translation(f, &r1);

    let centre = [theta1.theta_x, theta1.theta_y, theta1.theta_z, t1.x, t1.y, t1.z];
    let joint_cfg = GaConfig { seed: derive_seed(settings.ga.seed, 2 * run as u64 + 1), ..settings.ga };
    let joint = ga_minimize(
        |g| fitness_joint(&euler_to_rot(EulerXYZ::from_slice(&g[..3])), &Vec3::new(g[3], g[4], g[5]), samples, k),
        &boxed(&centre, &[rb, rb, rb, tb, tb, tb]),
        &joint_cfg,
        &[centre.to_vec()],
    );
    let g = &joint.best;
    let euler = EulerXYZ::from_slice(&g[..3]);
    let translation = Vec3::new(g[3], g[4], g[5]);
    Ok(RunResult {
        extrinsics: RigidTransform::new(euler_to_rot(euler), translation),
        euler,
        translation,
        seed_euler: theta1,
        seed_translation: t1,
        rotation_fitness: rot.best_fitness,
        joint_fitness: joint.best_fitness,
        rotation_history: rot.history.len(),
        joint_history: joint.history.len(),
        history_non_increasing: non_increasing(&rot.history) && non_increasing(&joint.history),
    })
}

fn similar_normals_warning(samples: &[Sample]) -> Option<String> {
    let mut max_angle: f64 = 0.0;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            max_angle = max_angle.max(angle_between(&a.lidar.normal, &b.lidar.normal));
        }
    }
    (max_angle.to_degrees() < SIMILAR_NORMALS_DEG).then(|| {
        format!(
            "all board normals lie within {:.2} degrees of each other; translation along the board plane is weakly observable",
            max_angle.to_degrees()
        )
    })
}

/// Full calibration: closed-form seeds, two GA stages, repeated
/// `settings.runs` times and averaged (mean translation, chordal-mean
/// rotation).
pub fn calibrate(
    samples: &[Sample],
    settings: &CalibrationSettings,
    k: &CameraIntrinsics,
) -> Result<CalibrationResult, CalibError> {
    if samples.len() < MIN_SAMPLES {
        return Err(CalibError::TooFewSamples(samples.len()));
    }
    settings.validate()?;
    for (i, s) in samples.iter().enumerate() {
        if !(s.metres_per_pixel > 0.0 && s.metres_per_pixel.is_finite()) {
            return Err(CalibError::InvalidSample(i));
        }
    }
    let mut warnings = Vec::new();
    if let Some(w) = similar_normals_warning(samples) {
        warn!("{w}");
        warnings.push(w);
    }
    let f = FeatureMatrices::from_samples(samples);
    let seed_rotation = init_rotation(&f)?;
    let runs = (0..settings.runs)
        .map(|run| run_once(samples, &f, &seed_rotation, settings, k, run))
        .collect::<Result<Vec<_>, _>>()?;

    let rotation = chordal_mean(runs.iter().map(|r| &r.extrinsics.rotation))?;
    let translation = runs.iter().map(|r| r.translation).sum::<Vec3>() / runs.len() as f64;
    let extrinsics = RigidTransform::new(rotation, translation);
    let fitness = fitness_breakdown(&rotation, &translation, samples, k)?;
    Ok(CalibrationResult { extrinsics, euler: rot_to_euler(&rotation)?, runs, fitness, warnings })
}
