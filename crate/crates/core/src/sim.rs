//! Synthetic ground truth: board poses, exact features in both sensor
//! frames, feature-level lidar noise, raycast lidar scans and projected
//! checkerboard corners.
//!
//! The lidar frame doubles as the world frame.

use crate::cam_features::{board_object_points, central_square_pixels, features_from_pose, BoardCamFeatures, CornerGrid};
use crate::geom::{axis_angle, CameraIntrinsics, Distortion, EulerXYZ, Mat3, RigidTransform, Vec2, Vec3};
use crate::lidar_features::{BoardGeometry, BoardLidarFeatures, LidarPoint, PointCloud, RegionBounds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("region cannot hold the board: {0}")]
    RegionTooSmall(String),
    #[error("board is not in front of both sensors")]
    NotVisible,
    #[error("no lidar ray hits the board")]
    NoHits,
    #[error("checkerboard corner {0} projects outside the image")]
    OutOfFrame(usize),
}

/// Spinning multi-beam lidar with evenly spaced beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarModel {
    pub beams: usize,
    /// Half of the symmetric vertical field of view, degrees.
    pub vertical_fov_deg: f64,
    pub azimuth_step_deg: f64,
    /// Range noise standard deviation, metres.
    pub range_noise: f64,
    pub max_range: f64,
    /// Also emit, for every beam, the points where its scan cone crosses
    /// the board boundary; models a scan with unlimited azimuth resolution
    /// at the edges.
    pub exact_edges: bool,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            beams: 16,
            vertical_fov_deg: 15.0,
            azimuth_step_deg: 0.2,
            range_noise: 0.01,
            max_range: 100.0,
            exact_edges: false,
        }
    }
}

impl LidarModel {
    /// Beam elevations in radians, ring 0 lowest.
    pub fn elevations(&self) -> Vec<f64> {
        let fov = self.vertical_fov_deg.to_radians();
        let n = self.beams.max(2);
        (0..n).map(|i| -fov + 2.0 * fov * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardPose {
    /// Board frame (x along the length, y along the width, z into the
    /// board away from the sensors) to lidar frame.
    pub board_to_lidar: RigidTransform,
    /// In-plane rotation of the board edges from horizontal, radians.
    pub tilt: f64,
}

/// Feature-level lidar noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Largest normal deviation, degrees; the deviation is Gaussian with
    /// standard deviation half of this, truncated at it.
    pub normal_level_deg: f64,
    /// Diameter of the sphere the centre is displaced within, metres.
    pub centre_diameter: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn contains(&self, uv: &Vec2) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x < self.width as f64 && uv.y < self.height as f64
    }
}

/// How board poses are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSampling {
    pub tilt_min_deg: f64,
    pub tilt_max_deg: f64,
    /// Largest rotation of the board away from facing the lidar, degrees.
    pub max_turn_deg: f64,
    /// Fewest lidar rings that must cross each edge of the board.
    pub min_rings_per_edge: usize,
}

impl Default for PoseSampling {
    fn default() -> Self {
        Self { tilt_min_deg: 40.0, tilt_max_deg: 65.0, max_turn_deg: 30.0, min_rings_per_edge: 2 }
    }
}

/// Sensor rig and board used to generate data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    /// Lidar to camera ground truth.
    pub extrinsics: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub image: ImageSize,
    pub lidar: LidarModel,
    pub board: BoardGeometry,
}

/// Lidar to camera rotation for a camera looking along the lidar's x axis
/// (camera x right, y down, z forward).
pub fn forward_camera_rotation() -> Mat3 {
    Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

impl Default for Scene {
    fn default() -> Self {
        let offset = crate::geom::euler_to_rot(EulerXYZ::new(0.03, -0.02, 0.05));
        Self {
            extrinsics: RigidTransform::new(offset * forward_camera_rotation(), Vec3::new(0.08, -0.21, -0.12)),
            intrinsics: CameraIntrinsics {
                fx: 1000.0,
                fy: 1000.0,
                cx: 964.0,
                cy: 604.0,
                distortion: Distortion::RadialTangential { k1: -0.05, k2: 0.01, p1: 0.0, p2: 0.0, k3: 0.0 },
            },
            image: ImageSize { width: 1928, height: 1208 },
            lidar: LidarModel::default(),
            board: BoardGeometry { length: 0.8, width: 0.6, rows: 5, cols: 7, square: 0.08 },
        }
    }
}

/// Axis-aligned rectangle in its own frame, placed by a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub pose: RigidTransform,
    pub half_length: f64,
    pub half_width: f64,
}

impl Rectangle {
    pub fn corners(&self) -> [Vec3; 4] {
        let (a, b) = (self.half_length, self.half_width);
        [(a, b), (a, -b), (-a, -b), (-a, b)].map(|(x, y)| self.pose.apply(&Vec3::new(x, y, 0.0)))
    }

    /// Range along the unit ray `dir` from the origin, if it hits.
    fn hit(&self, dir: &Vec3) -> Option<f64> {
        let n: Vec3 = self.pose.rotation.column(2).into_owned();
        let c = self.pose.translation;
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&c) / denom;
        if t <= 0.0 {
            return None;
        }
        let local = self.pose.rotation.transpose() * (dir * t - c);
        (local.x.abs() <= self.half_length && local.y.abs() <= self.half_width).then_some(t)
    }

    /// Points where the cone of constant elevation crosses the boundary.
    fn cone_crossings(&self, elevation: f64) -> Vec<Vec3> {
        let tau2 = elevation.tan().powi(2);
        let c = self.corners();
        let mut out = Vec::new();
        for i in 0..4 {
            let a = c[i];
            let d = c[(i + 1) % 4] - a;
            let qa = d.z * d.z - tau2 * (d.x * d.x + d.y * d.y);
            let qb = 2.0 * (a.z * d.z - tau2 * (a.x * d.x + a.y * d.y));
            let qc = a.z * a.z - tau2 * (a.x * a.x + a.y * a.y);
            let mut roots = Vec::new();
            if qa.abs() < 1e-14 {
                if qb.abs() > 1e-14 {
                    roots.push(-qc / qb);
                }
            } else {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    roots.push((-qb + sq) / (2.0 * qa));
                    roots.push((-qb - sq) / (2.0 * qa));
                }
            }
            for s in roots {
                if !(0.0..=1.0).contains(&s) {
                    continue;
                }
                let p = a + d * s;
                let elev = p.z.atan2(p.x.hypot(p.y));
                if (elev - elevation).abs() < 1e-9 {
                    out.push(p);
                }
            }
        }
        out
    }
}

/// Raycasts a full revolution against the targets; the nearest hit of each
/// ray is kept and perturbed along the ray by Gaussian range noise.
pub fn raycast(targets: &[Rectangle], lidar: &LidarModel, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, lidar.range_noise.max(0.0)).unwrap();
    let steps = (360.0 / lidar.azimuth_step_deg).round().max(1.0) as usize;
    let mut points = Vec::new();
    let mut emit = |rng: &mut ChaCha8Rng, dir: Vec3, range: f64, ring: usize| {
        let r = if lidar.range_noise > 0.0 { range + noise.sample(rng) } else { range };
        let p = dir * r;
        points.push(LidarPoint { position: p, ring: ring as u16 });
    };
    for (ring, elev) in lidar.elevations().into_iter().enumerate() {
        let (se, ce) = elev.sin_cos();
        for k in 0..steps {
            let az = (k as f64 * lidar.azimuth_step_deg).to_radians();
            let dir = Vec3::new(ce * az.cos(), ce * az.sin(), se);
            let nearest = targets.iter().filter_map(|t| t.hit(&dir)).fold(f64::INFINITY, f64::min);
            if nearest <= lidar.max_range {
                emit(&mut rng, dir, nearest, ring);
            }
        }
        if lidar.exact_edges {
            for t in targets {
                for p in t.cone_crossings(elev) {
                    let range = p.norm();
                    if range <= lidar.max_range {
                        emit(&mut rng, p / range, range, ring);
                    }
                }
            }
        }
    }
    PointCloud::new(points)
}

/// Orders board corners as seen from the lidar: topmost, right (smaller y),
/// the diagonal opposite of the top, and left. Input corners are adjacent
/// in sequence.
fn order_lidar_corners(c: [Vec3; 4]) -> [Vec3; 4] {
    let top = (0..4).max_by(|&a, &b| c[a].z.total_cmp(&c[b].z)).unwrap();
    let (a, b) = ((top + 1) % 4, (top + 3) % 4);
    let (right, left) = if c[a].y <= c[b].y { (a, b) } else { (b, a) };
    [c[top], c[right], c[(top + 2) % 4], c[left]]
}

impl Scene {
    pub fn board_rectangle(&self, pose: &BoardPose) -> Rectangle {
        Rectangle { pose: pose.board_to_lidar, half_length: self.board.length / 2.0, half_width: self.board.width / 2.0 }
    }

    pub fn board_to_camera(&self, pose: &BoardPose) -> RigidTransform {
        self.extrinsics.compose(&pose.board_to_lidar)
    }

    /// Board pose with its centre at `centre`, turned away from facing the
    /// lidar by `turn` radians about `turn_axis_angle` (direction of the
    /// turn axis around the facing direction), then rotated in-plane by `tilt`.
    pub fn make_pose(&self, centre: Vec3, tilt: f64, turn: f64, turn_axis_angle: f64) -> BoardPose {
        let facing = centre.normalize();
        let down = Vec3::new(0.0, 0.0, -1.0);
        let y0 = (down - facing * down.dot(&facing)).normalize();
        let x0 = y0.cross(&facing);
        let axis = x0 * turn_axis_angle.cos() + y0 * turn_axis_angle.sin();
        let turn_r = if turn.abs() > 0.0 { axis_angle(&axis, turn) } else { Mat3::identity() };
        let base = Mat3::from_columns(&[x0, y0, facing]);
        let rotation = turn_r * base * axis_angle(&Vec3::z(), tilt);
        BoardPose { board_to_lidar: RigidTransform::new(rotation, centre), tilt }
    }

    /// Checks that both sensors see the front of the whole board and that
    /// enough lidar rings cross every edge.
    pub fn is_visible(&self, pose: &BoardPose, min_rings_per_edge: usize) -> bool {
        let rect = self.board_rectangle(pose);
        let corners = rect.corners();
        let centre = pose.board_to_lidar.translation;
        let normal_l: Vec3 = -pose.board_to_lidar.rotation.column(2).into_owned();
        if centre.x <= 0.0 || normal_l.dot(&centre) >= 0.0 {
            return false;
        }
        let cam = self.board_to_camera(pose);
        let normal_c: Vec3 = -cam.rotation.column(2).into_owned();
        if cam.translation.z <= 0.0 || normal_c.dot(&cam.translation) >= 0.0 {
            return false;
        }
        for c in corners {
            let p = self.extrinsics.apply(&c);
            match self.intrinsics.project(&p) {
                Ok(uv) if p.z > 0.0 && self.image.contains(&uv) => {}
                _ => return false,
            }
        }
        let elev = |p: &Vec3| p.z.atan2(p.x.hypot(p.y));
        let beams = self.lidar.elevations();
        for i in 0..4 {
            let (a, b) = (elev(&corners[i]), elev(&corners[(i + 1) % 4]));
            let (lo, hi) = (a.min(b), a.max(b));
            if beams.iter().filter(|&&e| e > lo && e < hi).count() < min_rings_per_edge {
                return false;
            }
        }
        let fov = self.lidar.vertical_fov_deg.to_radians();
        corners.iter().all(|c| elev(c).abs() < fov)
    }

    /// Draws `n` visible board poses with centres uniform in `region`
    /// (shrunk so the whole board fits inside it).
    pub fn sample_poses(&self, n: usize, region: &RegionBounds, sampling: &PoseSampling, seed: u64) -> Result<Vec<BoardPose>, SimError> {
        let half = self.board.diagonal() / 2.0;
        let inner = [
            (region.x_min + half, region.x_max - half),
            (region.y_min + half, region.y_max - half),
            (region.z_min + half, region.z_max - half),
        ];
        if let Some(axis) = inner.iter().position(|(lo, hi)| lo > hi) {
            return Err(SimError::RegionTooSmall(format!(
                "axis {} is narrower than the board diagonal",
                ["x", "y", "z"][axis]
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t0, t1) = (sampling.tilt_min_deg.to_radians(), sampling.tilt_max_deg.to_radians());
        let max_turn = sampling.max_turn_deg.to_radians();
        let mut poses = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while poses.len() < n {
            attempts += 1;
            if attempts > 10_000 * n.max(1) {
                return Err(SimError::RegionTooSmall("no visible board pose found in the region".into()));
            }
            let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let centre = Vec3::new(u(&mut rng, inner[0]), u(&mut rng, inner[1]), u(&mut rng, inner[2]));
            let tilt = u(&mut rng, (t0, t1));
            let turn = u(&mut rng, (0.0, max_turn));
            let turn_axis = rng.random_range(0.0..2.0 * PI);
            let pose = self.make_pose(centre, tilt, turn, turn_axis);
            if self.is_visible(&pose, sampling.min_rings_per_edge) {
                poses.push(pose);
            }
        }
        Ok(poses)
    }

    /// Exact features in both frames.
    pub fn true_features(&self, pose: &BoardPose) -> Result<(BoardLidarFeatures, BoardCamFeatures), SimError> {
        let rect = self.board_rectangle(pose);
        let centre = pose.board_to_lidar.translation;
        let normal: Vec3 = -pose.board_to_lidar.rotation.column(2).into_owned();
        let cam_pose = self.board_to_camera(pose);
        if centre.dot(&normal) >= 0.0 || cam_pose.translation.z <= 0.0 {
            return Err(SimError::NotVisible);
        }
        let lidar = BoardLidarFeatures {
            normal,
            centre,
            corners: order_lidar_corners(rect.corners()),
            plane_inlier_rms: 0.0,
        };
        let grid = self.project_grid(&cam_pose).map_err(|_| SimError::NotVisible)?;
        let cam = features_from_pose(&cam_pose, &self.board, central_square_pixels(&grid), 0.0);
        Ok((lidar, cam))
    }

    fn project_grid(&self, cam_pose: &RigidTransform) -> Result<CornerGrid, SimError> {
        let pixels = board_object_points(self.board.rows, self.board.cols, self.board.square)
            .iter()
            .enumerate()
            .map(|(i, p)| self.intrinsics.project(&cam_pose.apply(p)).map_err(|_| SimError::OutOfFrame(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CornerGrid { rows: self.board.rows, cols: self.board.cols, pixels })
    }

    pub fn raycast_scan(&self, pose: &BoardPose, seed: u64) -> Result<PointCloud, SimError> {
        let cloud = raycast(&[self.board_rectangle(pose)], &self.lidar, seed);
        if cloud.is_empty() {
            return Err(SimError::NoHits);
        }
        Ok(cloud)
    }

    /// Projected inner corners with optional Gaussian pixel noise.
    pub fn synth_corners(&self, pose: &BoardPose, pixel_sigma: f64, seed: u64) -> Result<CornerGrid, SimError> {
        let mut grid = self.project_grid(&self.board_to_camera(pose))?;
        if pixel_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, pixel_sigma).unwrap();
            for p in &mut grid.pixels {
                *p += Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        if let Some(i) = grid.pixels.iter().position(|p| !self.image.contains(p)) {
            return Err(SimError::OutOfFrame(i));
        }
        Ok(grid)
    }
}

/// Standard normal draw truncated to `[-2, 2]` by rejection.
fn truncated_unit_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Perturbs lidar features: the normal is turned about a random
/// perpendicular axis by a truncated Gaussian angle, the centre is moved by
/// a Gaussian offset kept inside the sphere of the given diameter. Corners
/// follow the same rigid motion about the centre.
pub fn perturb_features<R: Rng>(f: &BoardLidarFeatures, spec: &NoiseSpec, rng: &mut R) -> BoardLidarFeatures {
    let angle = truncated_unit_normal(rng) * spec.normal_level_deg.to_radians() / 2.0;
    let phi = rng.random_range(0.0..2.0 * PI);
    let radius = spec.centre_diameter / 2.0;
    let sigma = spec.centre_diameter / 4.0;
    let offset = loop {
        let d = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * sigma;
        if d.norm() <= radius {
            break d;
        }
    };
    if spec.normal_level_deg == 0.0 && spec.centre_diameter == 0.0 {
        return *f;
    }
    let n = f.normal;
    let u = n.cross(&if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
    let v = n.cross(&u);
    let axis = u * phi.cos() + v * phi.sin();
    let r = axis_angle(&axis, angle);
    let centre = f.centre + offset;
    BoardLidarFeatures {
        normal: (r * n).normalize(),
        centre,
        corners: f.corners.map(|c| centre + r * (c - f.centre)),
        plane_inlier_rms: f.plane_inlier_rms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cam_features::extract_cam_features;
    use crate::geom::angle_between;
    use crate::lidar_features::{crop_region, extract_board_features, RansacParams};

    fn region() -> RegionBounds {
        RegionBounds { x_min: 1.5, x_max: 4.5, y_min: -1.5, y_max: 1.5, z_min: -1.0, z_max: 1.0 }
    }

    #[test]
    fn sampled_poses_are_deterministic_and_in_range() {
        let scene = Scene::default();
        let s = PoseSampling::default();
        let a = scene.sample_poses(3, &region(), &s, 5).unwrap();
        let b = scene.sample_poses(3, &region(), &s, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_ne!(a[1], a[2]);
        for p in scene.sample_poses(50, &region(), &s, 9).unwrap() {
            let deg = p.tilt.to_degrees();
            assert!((40.0..=65.0).contains(&deg));
            assert!(scene.is_visible(&p, 2));
            assert!(scene.board_to_camera(&p).translation.z > 0.0);
        }
    }

    #[test]
    fn sampled_normals_are_diverse() {
        let scene = Scene::default();
        let poses = scene.sample_poses(100, &region(), &PoseSampling::default(), 1).unwrap();
        let normals: Vec<Vec3> = poses.iter().map(|p| scene.true_features(p).unwrap().0.normal).collect();
        let mut max_angle: f64 = 0.0;
        for (i, a) in normals.iter().enumerate() {
            for b in &normals[i + 1..] {
                max_angle = max_angle.max(angle_between(a, b));
            }
        }
        assert!(max_angle.to_degrees() > 20.0);
    }

    #[test]
    fn tiny_region_is_rejected() {
        let r = RegionBounds { x_min: 2.0, x_max: 2.5, y_min: -1.0, y_max: 1.0, z_min: -1.0, z_max: 1.0 };
        assert!(matches!(
            Scene::default().sample_poses(1, &r, &PoseSampling::default(), 0),
            Err(SimError::RegionTooSmall(_))
        ));
    }

    #[test]
    fn identity_extrinsics_give_identical_features() {
        // Lidar and camera coincide; the board straight ahead of the camera.
        let scene = Scene { extrinsics: RigidTransform::identity(), ..Scene::default() };
        let pose = BoardPose {
            board_to_lidar: RigidTransform::new(axis_angle(&Vec3::z(), 0.8), Vec3::new(0.1, 0.0, 2.5)),
            tilt: 0.8,
        };
        let (l, c) = scene.true_features(&pose).unwrap();
        assert_eq!(l.normal, c.normal);
        assert_eq!(l.centre, c.centre);
    }

    #[test]
    fn features_consistent_under_truth() {
        let scene = Scene::default();
        let geo = scene.board;
        for pose in scene.sample_poses(20, &region(), &PoseSampling::default(), 3).unwrap() {
            let (l, c) = scene.true_features(&pose).unwrap();
            let ext = scene.extrinsics;
            assert!((ext.rotate(&l.normal) - c.normal).norm() < 1e-12);
            assert!((ext.apply(&l.centre) - c.centre).norm() < 1e-12);
            for k in 0..4 {
                assert!(((l.corners[k] - l.centre).norm() - geo.diagonal() / 2.0).abs() < 1e-12);
                // Top and bottom corners correspond across sensors.
                if k % 2 == 0 {
                    assert!((ext.apply(&l.corners[k]) - c.corners[k]).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn perturbation_zero_spec_is_identity() {
        let scene = Scene::default();
        let pose = scene.sample_poses(1, &region(), &PoseSampling::default(), 2).unwrap()[0];
        let (l, _) = scene.true_features(&pose).unwrap();
        let spec = NoiseSpec { normal_level_deg: 0.0, centre_diameter: 0.0, seed: 1 };
        assert_eq!(perturb_features(&l, &spec, &mut spec.rng()), l);
    }

    #[test]
    fn perturbation_statistics() {
        let scene = Scene::default();
        let pose = scene.sample_poses(1, &region(), &PoseSampling::default(), 2).unwrap()[0];
        let (l, _) = scene.true_features(&pose).unwrap();
        let spec = NoiseSpec { normal_level_deg: 2.0, centre_diameter: 0.01, seed: 77 };
        let mut rng = spec.rng();
        let mut sum_sq = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let p = perturb_features(&l, &spec, &mut rng);
            let dev = angle_between(&p.normal, &l.normal).to_degrees();
            assert!(dev <= 2.0 + 1e-9);
            assert!((p.centre - l.centre).norm() <= 0.005 + 1e-15);
            assert!((p.normal.norm() - 1.0).abs() < 1e-12);
            sum_sq += dev * dev;
        }
        let sigma = (sum_sq / n as f64).sqrt();
        assert!((0.8..=1.2).contains(&sigma), "sigma {sigma}");
    }

    fn straight_board(scene: &Scene, distance: f64, tilt: f64) -> BoardPose {
        scene.make_pose(Vec3::new(distance, 0.0, 0.0), tilt, 0.0, 0.0)
    }

    #[test]
    fn ring_count_for_upright_board() {
        let scene = Scene { lidar: LidarModel { range_noise: 0.0, ..LidarModel::default() }, ..Scene::default() };
        let cloud = scene.raycast_scan(&straight_board(&scene, 2.0, 0.0), 1).unwrap();
        let rings: std::collections::BTreeSet<u16> = cloud.iter().map(|p| p.ring).collect();
        assert!((4..=8).contains(&rings.len()), "{}", rings.len());
    }

    #[test]
    fn noiseless_scan_is_coplanar() {
        let scene = Scene { lidar: LidarModel { range_noise: 0.0, ..LidarModel::default() }, ..Scene::default() };
        let pose = scene.sample_poses(1, &region(), &PoseSampling::default(), 4).unwrap()[0];
        let cloud = scene.raycast_scan(&pose, 0).unwrap();
        let plane = crate::geom::Plane::from_point_normal(&pose.board_to_lidar.translation, &pose.board_to_lidar.rotation.column(2).into_owned());
        assert!(cloud.iter().all(|p| plane.signed_distance(&p.position).abs() < 1e-9));
    }

    #[test]
    fn finer_azimuth_doubles_points() {
        let lidar = LidarModel { range_noise: 0.0, ..LidarModel::default() };
        let coarse = Scene { lidar, ..Scene::default() };
        let fine = Scene { lidar: LidarModel { azimuth_step_deg: 0.1, ..lidar }, ..Scene::default() };
        let pose = straight_board(&coarse, 2.5, 0.7);
        let a = coarse.raycast_scan(&pose, 0).unwrap().len() as f64;
        let b = fine.raycast_scan(&pose, 0).unwrap().len() as f64;
        assert!((b / a - 2.0).abs() < 0.1, "{a} {b}");
    }

    #[test]
    fn board_behind_lidar_gets_no_hits() {
        let scene = Scene::default();
        let pose = BoardPose { board_to_lidar: RigidTransform::new(Mat3::identity(), Vec3::new(0.0, 0.0, 50.0)), tilt: 0.0 };
        assert_eq!(scene.raycast_scan(&pose, 0), Err(SimError::NoHits));
    }

    #[test]
    fn crop_keeps_board_not_wall() {
        let scene = Scene { lidar: LidarModel { range_noise: 0.0, ..LidarModel::default() }, ..Scene::default() };
        let pose = straight_board(&scene, 2.5, 0.75);
        let board = scene.board_rectangle(&pose);
        let wall = Rectangle {
            pose: RigidTransform::new(forward_wall_rotation(), Vec3::new(6.0, 0.0, 0.0)),
            half_length: 3.0,
            half_width: 2.0,
        };
        let scene_cloud = raycast(&[board, wall], &scene.lidar, 0);
        let board_only = raycast(&[board], &scene.lidar, 0);
        let cropped = crop_region(&scene_cloud, &region()).unwrap();
        assert_eq!(cropped.len(), board_only.len());
        assert!(scene_cloud.len() > cropped.len());
    }

    fn forward_wall_rotation() -> Mat3 {
        Mat3::from_columns(&[Vec3::y(), Vec3::z(), Vec3::x()])
    }

    #[test]
    fn synth_corners_pitch_and_round_trip() {
        let scene = Scene { intrinsics: CameraIntrinsics::pinhole(1000.0, 1000.0, 964.0, 604.0), ..Scene::default() };
        // Board 2 m straight ahead of the camera, fronto-parallel.
        let cam_pose = RigidTransform::new(Mat3::identity(), Vec3::new(0.0, 0.0, 2.0));
        let board_to_lidar = scene.extrinsics.inverse().compose(&cam_pose);
        let pose = BoardPose { board_to_lidar, tilt: 0.0 };
        let grid = scene.synth_corners(&pose, 0.0, 0).unwrap();
        let pitch = (grid.pixels[1] - grid.pixels[0]).norm();
        assert!((pitch - 1000.0 * 0.08 / 2.0).abs() < 1e-9);
        for pose in scene.sample_poses(10, &region(), &PoseSampling::default(), 6).unwrap() {
            let grid = scene.synth_corners(&pose, 0.0, 0).unwrap();
            let f = extract_cam_features(&grid, &scene.intrinsics, &scene.board).unwrap();
            let (_, truth) = scene.true_features(&pose).unwrap();
            assert!((f.centre - truth.centre).norm() < 1e-5);
            assert!(angle_between(&f.normal, &truth.normal) < 1e-5);
        }
    }

    #[test]
    fn corner_outside_image_is_out_of_frame() {
        let scene = Scene::default();
        let cam_pose = RigidTransform::new(Mat3::identity(), Vec3::new(1.5, 0.0, 1.5));
        let pose = BoardPose { board_to_lidar: scene.extrinsics.inverse().compose(&cam_pose), tilt: 0.0 };
        assert!(matches!(scene.synth_corners(&pose, 0.0, 0), Err(SimError::OutOfFrame(_))));
    }

    #[test]
    fn exact_edge_scan_recovers_true_features() {
        let scene = Scene {
            lidar: LidarModel { range_noise: 0.0, exact_edges: true, ..LidarModel::default() },
            ..Scene::default()
        };
        let ransac = RansacParams::default();
        for pose in scene.sample_poses(10, &region(), &PoseSampling { min_rings_per_edge: 3, ..PoseSampling::default() }, 12).unwrap() {
            let cloud = scene.raycast_scan(&pose, 0).unwrap();
            let f = extract_board_features(&cloud, &scene.board, &region(), &ransac).unwrap();
            let (truth, _) = scene.true_features(&pose).unwrap();
            assert!(angle_between(&f.normal, &truth.normal) < 1e-6);
            assert!((f.centre - truth.centre).norm() < 1e-6, "{}", (f.centre - truth.centre).norm());
        }
    }
}
