//! File formats: point clouds (CSV `x,y,z,ring` or ASCII PCD), corner
//! lists (CSV `u,v`), sample manifests, extrinsics JSON and binary PPM.

use crate::calib_opt::{CalibrationResult, FitnessBreakdown, Sample};
use crate::cam_features::CornerGrid;
use crate::geom::{angle_between, is_rotation, CameraIntrinsics, EulerXYZ, Mat3, RigidTransform, Vec2, Vec3};
use crate::lidar_features::{LidarPoint, PointCloud};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format { path: path.display().to_string(), msg: msg.into() }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> IoError {
    IoError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    match e.position() {
        Some(pos) => parse_err(path, pos.line(), e.to_string()),
        None => io_err(path, e),
    }
}

/// Reads typed CSV rows, reporting malformed rows by line.
fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    reader.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct CloudRow {
    x: f64,
    y: f64,
    z: f64,
    ring: u16,
}

/// Reads a cloud, choosing the format from the `.pcd` extension.
pub fn read_cloud(path: &Path) -> Result<PointCloud, IoError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pcd")) {
        read_cloud_pcd(path)
    } else {
        read_cloud_csv(path)
    }
}

pub fn read_cloud_csv(path: &Path) -> Result<PointCloud, IoError> {
    let rows: Vec<CloudRow> = read_rows(path)?;
    Ok(rows.into_iter().map(|r| LidarPoint::new(r.x, r.y, r.z, r.ring)).collect())
}

pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_csv(
        path,
        cloud.iter().map(|p| CloudRow { x: p.position.x, y: p.position.y, z: p.position.z, ring: p.ring }),
    )
}

/// ASCII PCD with at least `x`, `y`, `z` and `ring` fields.
pub fn read_cloud_pcd(path: &Path) -> Result<PointCloud, IoError> {
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut fields: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut expected: Option<usize> = None;
    let mut columns: Option<[usize; 4]> = None;
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some(cols) = columns else {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default().to_ascii_uppercase();
            let rest: Vec<&str> = parts.collect();
            match key.as_str() {
                "FIELDS" => fields = rest.iter().map(|s| s.to_ascii_lowercase()).collect(),
                "COUNT" => {
                    counts = rest
                        .iter()
                        .map(|s| s.parse().map_err(|_| parse_err(path, lineno, "bad COUNT")))
                        .collect::<Result<_, _>>()?
                }
                "POINTS" => expected = Some(rest.first().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err(path, lineno, "bad POINTS"))?),
                "DATA" => {
                    if rest.first().map(|s| s.to_ascii_lowercase()) != Some("ascii".into()) {
                        return Err(format_err(path, "only ASCII PCD data is supported"));
                    }
                    if counts.is_empty() {
                        counts = vec![1; fields.len()];
                    }
                    // Column offset of each named field, honouring COUNT.
                    let offset = |name: &str| -> Result<usize, IoError> {
                        let i = fields.iter().position(|f| f == name).ok_or_else(|| format_err(path, format!("PCD has no `{name}` field")))?;
                        Ok(counts[..i].iter().sum())
                    };
                    columns = Some([offset("x")?, offset("y")?, offset("z")?, offset("ring")?]);
                }
                _ => {}
            }
            continue;
        };
        let values: Vec<&str> = line.split_whitespace().collect();
        let get = |c: usize| -> Result<f64, IoError> {
            values
                .get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, lineno, "malformed point row"))
        };
        let ring = get(cols[3])?;
        if ring < 0.0 || ring.fract() != 0.0 || ring > u16::MAX as f64 {
            return Err(parse_err(path, lineno, "ring must be a non-negative integer"));
        }
        points.push(LidarPoint::new(get(cols[0])?, get(cols[1])?, get(cols[2])?, ring as u16));
    }
    if columns.is_none() {
        return Err(format_err(path, "missing PCD DATA line"));
    }
    if let Some(n) = expected {
        if n != points.len() {
            return Err(format_err(path, format!("header declares {n} points, found {}", points.len())));
        }
    }
    Ok(PointCloud::new(points))
}

pub fn write_cloud_pcd(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let n = cloud.len();
    let header = format!(
        "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z ring\nSIZE 8 8 8 2\nTYPE F F F U\nCOUNT 1 1 1 1\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA ascii\n"
    );
    w.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;
    for p in cloud.iter() {
        writeln!(w, "{} {} {} {}", p.position.x, p.position.y, p.position.z, p.ring).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct CornerRow {
    u: f64,
    v: f64,
}

/// Reads `rows * cols` detected corners in row-major order.
pub fn read_corners(path: &Path, rows: usize, cols: usize) -> Result<CornerGrid, IoError> {
    let pts: Vec<CornerRow> = read_rows(path)?;
    if let Some(i) = pts.iter().position(|p| !(p.u.is_finite() && p.v.is_finite())) {
        return Err(parse_err(path, i as u64 + 2, "non-finite corner"));
    }
    let pixels = pts.into_iter().map(|p| Vec2::new(p.u, p.v)).collect();
    CornerGrid::new(rows, cols, pixels).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_corners(path: &Path, grid: &CornerGrid) -> Result<(), IoError> {
    write_csv(path, grid.pixels.iter().map(|p| CornerRow { u: p.x, v: p.y }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cloud: PathBuf,
    pub corners: PathBuf,
}

/// CSV with header `cloud,corners`; relative paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rows: Vec<ManifestEntry> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|e| ManifestEntry { cloud: base.join(e.cloud), corners: base.join(e.corners) })
        .collect())
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), IoError> {
    write_csv(path, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub euler: EulerXYZ,
    pub translation: [f64; 3],
    pub rotation_fitness: f64,
    pub joint_fitness: f64,
    pub rotation_generations: usize,
    pub joint_generations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleResidual {
    pub index: usize,
    /// Camera-frame distance between the transformed lidar centre and the camera centre, metres.
    pub centre_distance: f64,
    /// Angle between the rotated lidar normal and the camera normal, degrees.
    pub normal_angle_deg: f64,
    /// Image distance between both projected centres, pixels.
    pub centre_pixels: f64,
}

/// Extrinsics JSON: lidar to camera, `p_cam = rotation * p_lidar + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicsReport {
    pub euler: EulerXYZ,
    pub translation: [f64; 3],
    pub rotation: [[f64; 3]; 3],
    pub homogeneous: [[f64; 4]; 4],
    pub runs: Vec<RunReport>,
    pub fitness: FitnessBreakdown,
    pub samples: Vec<SampleResidual>,
    pub warnings: Vec<String>,
}

fn rows3(m: &Mat3) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

impl ExtrinsicsReport {
    pub fn new(result: &CalibrationResult, samples: &[Sample], k: &CameraIntrinsics) -> Self {
        let ext = result.extrinsics;
        let h = ext.to_homogeneous();
        let residuals = samples
            .iter()
            .enumerate()
            .map(|(index, s)| {
                let o = ext.apply(&s.lidar.centre);
                let px = match (k.project(&o), k.project(&s.cam.centre)) {
                    (Ok(a), Ok(b)) => (a - b).norm(),
                    _ => f64::INFINITY,
                };
                SampleResidual {
                    index,
                    centre_distance: (s.cam.centre - o).norm(),
                    normal_angle_deg: angle_between(&ext.rotate(&s.lidar.normal), &s.cam.normal).to_degrees(),
                    centre_pixels: px,
                }
            })
            .collect();
        Self {
            euler: result.euler,
            translation: ext.translation.into(),
            rotation: rows3(&ext.rotation),
            homogeneous: std::array::from_fn(|i| std::array::from_fn(|j| h[(i, j)])),
            runs: result
                .runs
                .iter()
                .map(|r| RunReport {
                    euler: r.euler,
                    translation: r.translation.into(),
                    rotation_fitness: r.rotation_fitness,
                    joint_fitness: r.joint_fitness,
                    rotation_generations: r.rotation_history,
                    joint_generations: r.joint_history,
                })
                .collect(),
            fitness: result.fitness,
            samples: residuals,
            warnings: result.warnings.clone(),
        }
    }

    pub fn transform(&self) -> RigidTransform {
        let r = self.rotation;
        RigidTransform::new(Mat3::from_fn(|i, j| r[i][j]), Vec3::from(self.translation))
    }
}

pub fn write_extrinsics(path: &Path, report: &ExtrinsicsReport) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Reads the extrinsics JSON and checks that the rotation is orthonormal.
pub fn read_extrinsics(path: &Path) -> Result<RigidTransform, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let report: ExtrinsicsReport = serde_json::from_str(&text).map_err(|e| parse_err(path, e.line() as u64, e.to_string()))?;
    let t = report.transform();
    if !is_rotation(&t.rotation, 1e-6) || !t.translation.iter().all(|v| v.is_finite()) {
        return Err(format_err(path, "rotation is not a proper orthonormal matrix"));
    }
    Ok(t)
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Image {
    pub fn black(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; width as usize * height as usize * 3] }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height).map_err(|e| io_err(path, e))?;
    w.write_all(&img.data).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a binary (P6) PPM with maxval 255.
pub fn read_ppm(path: &Path) -> Result<Image, IoError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| io_err(path, e))?;
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let bad = || format_err(path, "not a binary PPM (P6, maxval 255)");
    if token().as_deref() != Some("P6") {
        return Err(bad());
    }
    let mut num = || token().and_then(|t| t.parse::<u32>().ok());
    let (width, height, maxval) = (num().ok_or_else(bad)?, num().ok_or_else(bad)?, num().ok_or_else(bad)?);
    if maxval != 255 {
        return Err(bad());
    }
    let start = pos + 1;
    let len = width as usize * height as usize * 3;
    if start + len > bytes.len() {
        return Err(format_err(path, "truncated pixel data"));
    }
    Ok(Image { width, height, data: bytes[start..start + len].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn cloud() -> PointCloud {
        PointCloud::new(vec![LidarPoint::new(1.5, -0.25, 0.125, 3), LidarPoint::new(2.0, 0.1, -0.3, 7)])
    }

    #[test]
    fn cloud_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_cloud_csv(&p, &cloud()).unwrap();
        assert_eq!(read_cloud(&p).unwrap(), cloud());
    }

    #[test]
    fn cloud_pcd_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pcd");
        write_cloud_pcd(&p, &cloud()).unwrap();
        assert_eq!(read_cloud(&p).unwrap(), cloud());
    }

    #[test]
    fn pcd_with_extra_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pcd");
        fs::write(
            &p,
            "VERSION 0.7\nFIELDS x y z intensity ring time\nSIZE 4 4 4 4 2 4\nTYPE F F F F U F\nCOUNT 1 1 1 1 1 1\nWIDTH 1\nHEIGHT 1\nPOINTS 1\nDATA ascii\n1 2 3 40 5 0.1\n",
        )
        .unwrap();
        assert_eq!(read_cloud(&p).unwrap().points, vec![LidarPoint::new(1.0, 2.0, 3.0, 5)]);
        fs::write(&p, "FIELDS x y z\nDATA ascii\n1 2 3\n").unwrap();
        assert!(matches!(read_cloud(&p), Err(IoError::Format { .. })));
    }

    #[test]
    fn corrupt_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "x,y,z,ring\n1,2,3,0\n1,oops,3,0\n").unwrap();
        let err = read_cloud(&p).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err:?}");
        assert!(err.to_string().contains("bad.csv:3"));
        fs::write(&p, "x,y,z,ring\n1,2,3\n").unwrap();
        assert!(matches!(read_cloud(&p), Err(IoError::Parse { line: 2, .. })));
        let missing = dir.path().join("none.csv");
        assert!(matches!(read_cloud(&missing), Err(IoError::Io { .. })));
    }

    #[test]
    fn corners_round_trip_and_size_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.csv");
        let pixels: Vec<Vec2> = (0..6).map(|i| Vec2::new(i as f64 * 10.5, 3.0)).collect();
        let grid = CornerGrid::new(2, 3, pixels).unwrap();
        write_corners(&p, &grid).unwrap();
        assert_eq!(read_corners(&p, 2, 3).unwrap(), grid);
        assert!(matches!(read_corners(&p, 3, 3), Err(IoError::Format { .. })));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let e = vec![ManifestEntry { cloud: "a.csv".into(), corners: "a_k.csv".into() }];
        write_manifest(&p, &e).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back[0].cloud, dir.path().join("a.csv"));
        assert_eq!(back[0].corners, dir.path().join("a_k.csv"));
    }

    #[test]
    fn ppm_round_trip_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.ppm");
        let mut img = Image::black(4, 3);
        img.set(2, 1, [10, 20, 30]);
        write_ppm(&p, &img).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), img);
        let mut bytes = b"P6\n# note\n4 3\n255\n".to_vec();
        bytes.extend_from_slice(&img.data);
        fs::write(&p, bytes).unwrap();
        assert_eq!(read_ppm(&p).unwrap().get(2, 1), [10, 20, 30]);
        fs::write(&p, b"P3\n1 1\n255\n0 0 0\n").unwrap();
        assert!(read_ppm(&p).is_err());
    }

    #[test]
    fn extrinsics_json_rejects_non_rotation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.json");
        let ext = RigidTransform::from_euler(EulerXYZ::new(1.5, 0.1, 1.6), Vec3::new(0.1, 0.2, 0.3));
        let mut report = ExtrinsicsReport {
            euler: EulerXYZ::new(1.5, 0.1, 1.6),
            translation: ext.translation.into(),
            rotation: rows3(&ext.rotation),
            homogeneous: [[0.0; 4]; 4],
            runs: vec![],
            fitness: FitnessBreakdown::default(),
            samples: vec![],
            warnings: vec![],
        };
        write_extrinsics(&p, &report).unwrap();
        let back = read_extrinsics(&p).unwrap();
        assert!((back.rotation - ext.rotation).norm() < 1e-15);
        report.rotation[0][0] *= 2.0;
        write_extrinsics(&p, &report).unwrap();
        assert!(matches!(read_extrinsics(&p), Err(IoError::Format { .. })));
    }
}
