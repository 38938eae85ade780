//! Board pose in the camera frame from detected inner checkerboard corners.
//!
//! Planar PnP: corners are undistorted to normalized coordinates, a
//! homography from the board plane is estimated by normalized DLT and
//! decomposed into a pose, then refined by Gauss-Newton on the
//! reprojection residuals.

use crate::geom::{project_to_so3, CameraIntrinsics, Distortion, GeomError, Mat3, RigidTransform, Vec2, Vec3};
use crate::lidar_features::BoardGeometry;
use nalgebra::{DMatrix, Matrix3, Rotation3, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CamError {
    #[error("corner grid has {got} pixels, expected {expected}")]
    GridSize { expected: usize, got: usize },
    #[error("corner pixel {0} is not finite or outside the image")]
    BadPixel(usize),
    #[error("undistortion did not converge for pixel ({0:.2}, {1:.2})")]
    NoConvergence(f64, f64),
    #[error("homography is degenerate (collinear or too few correspondences)")]
    Degenerate,
    #[error("homography does not correspond to a board in front of the camera")]
    InvalidPose,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Detected inner corners, row-major from the top-left corner as detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerGrid {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec2>,
}

impl CornerGrid {
    pub fn new(rows: usize, cols: usize, pixels: Vec<Vec2>) -> Result<Self, CamError> {
        let grid = Self { rows, cols, pixels };
        grid.validate(None)?;
        Ok(grid)
    }

    /// Checks the pixel count and, when `image` is given as (width, height),
    /// that every corner lies inside it.
    pub fn validate(&self, image: Option<(u32, u32)>) -> Result<(), CamError> {
        let expected = self.rows * self.cols;
        if self.pixels.len() != expected {
            return Err(CamError::GridSize { expected, got: self.pixels.len() });
        }
        for (i, p) in self.pixels.iter().enumerate() {
            let inside = image.is_none_or(|(w, h)| p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64);
            if !(p.x.is_finite() && p.y.is_finite()) || !inside {
                return Err(CamError::BadPixel(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardCamFeatures {
    /// Unit normal pointing from the board toward the camera.
    pub normal: Vec3,
    pub centre: Vec3,
    /// Top, right, bottom and left corners by image position.
    pub corners: [Vec3; 4],
    /// Image length in pixels of the central square's edge.
    pub pixel_length: f64,
    pub reproj_rms: f64,
}

/// Inner corner positions in the board frame, centred on the checkerboard,
/// row-major with x along a row and y down the columns.
pub fn board_object_points(rows: usize, cols: usize, square: f64) -> Vec<Vec3> {
    let x0 = (cols as f64 - 1.0) * square / 2.0;
    let y0 = (rows as f64 - 1.0) * square / 2.0;
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| Vec3::new(c as f64 * square - x0, r as f64 * square - y0, 0.0)))
        .collect()
}

const UNDISTORT_TOL: f64 = 1e-8;
const UNDISTORT_ITERS: usize = 50;

fn undistort_one(uv: &Vec2, k: &CameraIntrinsics) -> Result<Vec2, CamError> {
    let target = k.pixel_to_normalized(uv);
    match k.distortion {
        Distortion::RadialTangential { .. } => {
            // Newton on distort(x) = target with a forward-difference Jacobian.
            let mut x = target;
            for _ in 0..UNDISTORT_ITERS {
                let f = k.distort_normalized(x.x, x.y) - target;
                if f.norm() <= UNDISTORT_TOL {
                    return Ok(x);
                }
                let h = 1e-7;
                let fx = (k.distort_normalized(x.x + h, x.y) - target - f) / h;
                let fy = (k.distort_normalized(x.x, x.y + h) - target - f) / h;
                let j = nalgebra::Matrix2::from_columns(&[fx, fy]);
                let step = j.try_inverse().ok_or(CamError::NoConvergence(uv.x, uv.y))? * f;
                x -= step;
                if !x.iter().all(|v| v.is_finite()) {
                    break;
                }
            }
            Err(CamError::NoConvergence(uv.x, uv.y))
        }
        Distortion::Equidistant { k: c } => {
            let theta_d = target.norm();
            if theta_d < 1e-15 {
                return Ok(Vec2::zeros());
            }
            let poly = |t: f64| {
                let t2 = t * t;
                t * (1.0 + t2 * (c[0] + t2 * (c[1] + t2 * (c[2] + t2 * c[3]))))
            };
            let dpoly = |t: f64| {
                let t2 = t * t;
                1.0 + t2 * (3.0 * c[0] + t2 * (5.0 * c[1] + t2 * (7.0 * c[2] + t2 * 9.0 * c[3])))
            };
            let mut theta = theta_d;
            for _ in 0..UNDISTORT_ITERS {
                let f = poly(theta) - theta_d;
                if f.abs() <= UNDISTORT_TOL {
                    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
                        break;
                    }
                    return Ok(target * (theta.tan() / theta_d));
                }
                let d = dpoly(theta);
                if d.abs() < 1e-12 {
                    break;
                }
                theta -= f / d;
            }
            Err(CamError::NoConvergence(uv.x, uv.y))
        }
    }
}

/// Pixels to undistorted normalized image coordinates `(x/z, y/z)`.
pub fn undistort_points(pixels: &[Vec2], k: &CameraIntrinsics) -> Result<Vec<Vec2>, CamError> {
    pixels.iter().map(|p| undistort_one(p, k)).collect()
}

/// Similarity normalizing points to zero mean and mean distance sqrt(2).
fn hartley(points: &[Vec2]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec2>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { 2f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: &Vec2) -> Vec2 {
    let q = h * Vec3::new(p.x, p.y, 1.0);
    Vec2::new(q.x / q.z, q.y / q.z)
}

/// Homography mapping board-plane points to normalized image points,
/// scaled to unit Frobenius norm.
pub fn homography_dlt(object_xy: &[Vec2], image: &[Vec2]) -> Result<Mat3, CamError> {
    let n = object_xy.len();
    if n < 4 || image.len() != n {
        return Err(CamError::Degenerate);
    }
    let t_obj = hartley(object_xy);
    let t_img = hartley(image);
    // Padded to at least 9 rows so the thin SVD keeps the full V.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let p = apply_h(&t_obj, &object_xy[i]);
        let q = apply_h(&t_img, &image[i]);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(CamError::Degenerate)?;
    let mut sv: Vec<(usize, f64)> = svd.singular_values.iter().copied().enumerate().collect();
    sv.sort_by(|a, b| b.1.total_cmp(&a.1));
    // Rank must be 8: the second smallest singular value is clearly non-zero.
    if sv[7].1 <= sv[0].1 * 1e-9 {
        return Err(CamError::Degenerate);
    }
    let h_row = v_t.row(sv[8].0);
    let hn = Matrix3::new(h_row[0], h_row[1], h_row[2], h_row[3], h_row[4], h_row[5], h_row[6], h_row[7], h_row[8]);
    let t_img_inv = t_img.try_inverse().ok_or(CamError::Degenerate)?;
    let h = t_img_inv * hn * t_obj;
    let norm = h.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(CamError::Degenerate);
    }
    Ok(h / norm)
}

/// Board to camera pose from a homography in normalized coordinates.
pub fn pose_from_homography(h: &Mat3) -> Result<RigidTransform, CamError> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let denom = h1.norm() + h2.norm();
    if denom <= 0.0 {
        return Err(CamError::InvalidPose);
    }
    let mut lambda = 2.0 / denom;
    if (lambda * h3).z <= 0.0 {
        lambda = -lambda;
    }
    let t = lambda * h3;
    if t.z <= 0.0 {
        return Err(CamError::InvalidPose);
    }
    let r1 = lambda * h1;
    let r2 = lambda * h2;
    let r3 = r1.cross(&r2);
    let r = project_to_so3(&Mat3::from_columns(&[r1, r2, r3]))?;
    Ok(RigidTransform::new(r, t))
}

fn residuals(pose: &RigidTransform, object: &[Vec3], image: &[Vec2]) -> Option<Vec<Vec2>> {
    object
        .iter()
        .zip(image)
        .map(|(x, m)| {
            let p = pose.apply(x);
            (p.z > 0.0).then(|| Vec2::new(p.x / p.z - m.x, p.y / p.z - m.y))
        })
        .collect()
}

fn cost(pose: &RigidTransform, object: &[Vec3], image: &[Vec2]) -> f64 {
    residuals(pose, object, image).map_or(f64::INFINITY, |r| r.iter().map(|e| e.norm_squared()).sum())
}

pub const REFINE_MAX_ITERS: usize = 25;
pub const REFINE_MIN_STEP: f64 = 1e-10;

/// Gauss-Newton on normalized-coordinate reprojection residuals. The pose is
/// updated as `R <- exp(w) R`, `t <- t + dt`; a step is only taken when it
/// lowers the cost, so the residual never increases.
pub fn refine_pose(pose: &RigidTransform, object: &[Vec3], image: &[Vec2]) -> RigidTransform {
    let mut best = *pose;
    let mut best_cost = cost(&best, object, image);
    for _ in 0..REFINE_MAX_ITERS {
        let mut jtj = SMatrix::<f64, 6, 6>::zeros();
        let mut jtr = SVector::<f64, 6>::zeros();
        for (x, m) in object.iter().zip(image) {
            let rx = best.rotation * x;
            let p = rx + best.translation;
            let iz = 1.0 / p.z;
            let r = Vec2::new(p.x * iz - m.x, p.y * iz - m.y);
            let dproj = SMatrix::<f64, 2, 3>::new(iz, 0.0, -p.x * iz * iz, 0.0, iz, -p.y * iz * iz);
            let mut dp = SMatrix::<f64, 3, 6>::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rx.cross_matrix()));
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
            let j = dproj * dp;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(step) = jtj.cholesky().map(|c| -c.solve(&jtr)) else {
            break;
        };
        let w = Vec3::new(step[0], step[1], step[2]);
        let dt = Vec3::new(step[3], step[4], step[5]);
        let candidate = RigidTransform::new(
            Rotation3::new(w).into_inner() * best.rotation,
            best.translation + dt,
        );
        let c = cost(&candidate, object, image);
        if c < best_cost {
            best = candidate;
            best_cost = c;
        } else {
            break;
        }
        if step.norm() < REFINE_MIN_STEP {
            break;
        }
    }
    if let Ok(r) = project_to_so3(&best.rotation) {
        best.rotation = r;
    }
    best
}

/// Root mean square of per-corner pixel residual norms through the full
/// camera model.
pub fn reprojection_rms(pose: &RigidTransform, object: &[Vec3], pixels: &[Vec2], k: &CameraIntrinsics) -> f64 {
    let sum: f64 = object
        .iter()
        .zip(pixels)
        .map(|(x, uv)| match k.project(&pose.apply(x)) {
            Ok(p) => (p - uv).norm_squared(),
            Err(_) => f64::INFINITY,
        })
        .sum();
    (sum / object.len() as f64).sqrt()
}

/// Board to camera pose of a corner grid.
pub fn estimate_board_pose(grid: &CornerGrid, k: &CameraIntrinsics, square: f64) -> Result<RigidTransform, CamError> {
    grid.validate(None)?;
    let norm = undistort_points(&grid.pixels, k)?;
    let object = board_object_points(grid.rows, grid.cols, square);
    let object_xy: Vec<Vec2> = object.iter().map(|p| Vec2::new(p.x, p.y)).collect();
    let h = homography_dlt(&object_xy, &norm)?;
    let pose = pose_from_homography(&h)?;
    Ok(refine_pose(&pose, &object, &norm))
}

/// Mean length of the row segments joining the inner corners nearest the
/// grid centre.
pub fn central_square_pixels(grid: &CornerGrid) -> f64 {
    let rc = (grid.rows as f64 - 1.0) / 2.0;
    let cc = (grid.cols as f64 - 1.0) / 2.0;
    let mut best = f64::INFINITY;
    let mut lengths = Vec::new();
    for r in 0..grid.rows {
        for c in 0..grid.cols - 1 {
            let d = (r as f64 - rc).powi(2) + (c as f64 + 0.5 - cc).powi(2);
            let len = (grid.pixels[r * grid.cols + c + 1] - grid.pixels[r * grid.cols + c]).norm();
            if d < best - 1e-9 {
                best = d;
                lengths.clear();
            }
            if (d - best).abs() <= 1e-9 {
                lengths.push(len);
            }
        }
    }
    lengths.iter().sum::<f64>() / lengths.len() as f64
}

/// Board corners in the camera frame, ordered top, right, bottom, left by
/// their image position: the topmost corner first, its diagonal opposite
/// third, and of the remaining two the one further right second.
pub fn ordered_corners(pose: &RigidTransform, geo: &BoardGeometry) -> [Vec3; 4] {
    let (hl, hw) = (geo.length / 2.0, geo.width / 2.0);
    // Consecutive entries are adjacent, so i and i + 2 are diagonal.
    let ring = [
        Vec3::new(hl, hw, 0.0),
        Vec3::new(hl, -hw, 0.0),
        Vec3::new(-hl, -hw, 0.0),
        Vec3::new(-hl, hw, 0.0),
    ]
    .map(|p| pose.apply(&p));
    let v = |p: &Vec3| p.y / p.z;
    let u = |p: &Vec3| p.x / p.z;
    let top = (0..4).min_by(|&a, &b| v(&ring[a]).total_cmp(&v(&ring[b]))).unwrap();
    let bottom = (top + 2) % 4;
    let (a, b) = ((top + 1) % 4, (top + 3) % 4);
    let (right, left) = if u(&ring[a]) >= u(&ring[b]) { (a, b) } else { (b, a) };
    [ring[top], ring[right], ring[bottom], ring[left]]
}

/// Normal, centre and corners of the board from its pose; the normal is the
/// pose's z axis signed to face the camera.
pub fn features_from_pose(pose: &RigidTransform, geo: &BoardGeometry, pixel_length: f64, reproj_rms: f64) -> BoardCamFeatures {
    let centre = pose.translation;
    let mut normal: Vec3 = pose.rotation.column(2).into_owned();
    if normal.dot(&centre) > 0.0 {
        normal = -normal;
    }
    BoardCamFeatures {
        normal,
        centre,
        corners: ordered_corners(pose, geo),
        pixel_length,
        reproj_rms,
    }
}

pub fn extract_cam_features(grid: &CornerGrid, k: &CameraIntrinsics, geo: &BoardGeometry) -> Result<BoardCamFeatures, CamError> {
    if grid.rows != geo.rows || grid.cols != geo.cols {
        return Err(CamError::GridSize { expected: geo.rows * geo.cols, got: grid.pixels.len() });
    }
    let pose = estimate_board_pose(grid, k, geo.square)?;
    let object = board_object_points(grid.rows, grid.cols, geo.square);
    let rms = reprojection_rms(&pose, &object, &grid.pixels, k);
    Ok(features_from_pose(&pose, geo, central_square_pixels(grid), rms))
}
