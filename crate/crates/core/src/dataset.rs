//! Loading calibration samples from a manifest, and writing simulated
//! datasets in the same file formats.

use crate::calib_opt::{derive_seed, Sample, MIN_SAMPLES};
use crate::cam_features::{extract_cam_features, CornerGrid};
use crate::config::{CalibConfig, ConfigError};
use crate::io::{read_cloud, read_corners, read_manifest, write_cloud_csv, write_corners, write_manifest, IoError, ManifestEntry};
use crate::lidar_features::{extract_board_features, PointCloud};
use crate::sim::{BoardPose, SimError};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("manifest {0}")]
    Manifest(IoError),
    #[error("a minimum of 3 checkerboard poses is required, the manifest lists {0}")]
    TooFewSamples(usize),
    #[error("sample {index}: {stage}: {msg}")]
    Sample { index: usize, stage: &'static str, msg: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Extracts the paired features of one observation.
pub fn extract_sample(index: usize, cloud: &PointCloud, grid: &CornerGrid, cfg: &CalibConfig) -> Result<Sample, DatasetError> {
    let err = |stage, msg: String| DatasetError::Sample { index, stage, msg };
    let k = cfg.intrinsics()?;
    let lidar = extract_board_features(cloud, &cfg.board, &cfg.region, &cfg.ransac)
        .map_err(|e| err("lidar extraction", e.to_string()))?;
    grid.validate(Some((cfg.camera.width, cfg.camera.height)))
        .map_err(|e| err("camera extraction", e.to_string()))?;
    let cam = extract_cam_features(grid, &k, &cfg.board).map_err(|e| err("camera extraction", e.to_string()))?;
    Sample::new(lidar, cam, cfg.board.square).map_err(|e| err("camera extraction", e.to_string()))
}

/// Reads every manifest entry and extracts its features.
pub fn load_samples(manifest: &Path, cfg: &CalibConfig) -> Result<Vec<Sample>, DatasetError> {
    let entries = read_manifest(manifest).map_err(DatasetError::Manifest)?;
    if entries.len() < MIN_SAMPLES {
        return Err(DatasetError::TooFewSamples(entries.len()));
    }
    entries
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let input = |err: IoError| DatasetError::Sample { index, stage: "input", msg: err.to_string() };
            let cloud = read_cloud(&e.cloud).map_err(input)?;
            let grid = read_corners(&e.corners, cfg.board.rows, cfg.board.cols).map_err(input)?;
            extract_sample(index, &cloud, &grid, cfg)
        })
        .collect()
}

/// One simulated observation: a raycast scan and projected corners.
pub fn simulate_observation(cfg: &CalibConfig, pose: &BoardPose, seed: u64, index: usize) -> Result<(PointCloud, CornerGrid), DatasetError> {
    let scene = cfg.scene()?;
    let cloud = scene.raycast_scan(pose, derive_seed(seed, 2 * index as u64))?;
    let grid = scene.synth_corners(pose, cfg.simulation.pixel_noise, derive_seed(seed, 2 * index as u64 + 1))?;
    Ok((cloud, grid))
}

/// Writes `n` simulated observations and a `manifest.csv` into `dir`;
/// returns the manifest path.
pub fn generate_dataset(cfg: &CalibConfig, n: usize, seed: u64, dir: &Path) -> Result<PathBuf, DatasetError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::Io { path: dir.display().to_string(), msg: e.to_string() })?;
    let scene = cfg.scene()?;
    let poses = scene.sample_poses(n, &cfg.region, &cfg.simulation.poses, seed)?;
    let mut entries = Vec::with_capacity(n);
    for (i, pose) in poses.iter().enumerate() {
        let (cloud, grid) = simulate_observation(cfg, pose, seed, i)?;
        let entry = ManifestEntry { cloud: format!("scan_{i:03}.csv").into(), corners: format!("corners_{i:03}.csv").into() };
        write_cloud_csv(&dir.join(&entry.cloud), &cloud)?;
        write_corners(&dir.join(&entry.corners), &grid)?;
        entries.push(entry);
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
