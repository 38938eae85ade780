//! Board normal, centre and corners from a lidar scan of the experimental
//! region.
//!
//! The lidar frame is assumed to be x forward, y left, z up. The board is
//! held in a tilted "diamond" pose so each ring crosses two of its edges:
//! the per-ring extremes in y trace the four edges, four line fits give the
//! corners, and the centre is the midpoint of the top-bottom diagonal.

use crate::geom::{Line3, Plane, Vec3};
use log::warn;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Fewest points a cropped region may hold before plane fitting is refused.
pub const MIN_REGION_POINTS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LidarError {
    #[error("experimental region holds {0} points, at least {MIN_REGION_POINTS} are needed")]
    EmptyRegion(usize),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no non-collinear triple found while fitting the board plane")]
    DegenerateCloud,
    #[error("board is crossed by {0} lidar rings with two or more points, at least 2 are needed")]
    TooFewRings(usize),
    #[error("edge `{edge}` has {count} points, a line fit needs 2")]
    InsufficientEdgePoints { edge: &'static str, count: usize },
    #[error("points are too close together to define a line")]
    DegeneratePoints,
    #[error("board edges are parallel, corner is undefined")]
    ParallelLines,
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub position: Vec3,
    pub ring: u16,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, ring: u16) -> Self {
        Self { position: Vec3::new(x, y, z), ring }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LidarPoint> {
        self.points.iter()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

impl FromIterator<LidarPoint> for PointCloud {
    fn from_iter<T: IntoIterator<Item = LidarPoint>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Axis-aligned box in the lidar frame, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl RegionBounds {
    pub fn validate(&self) -> Result<(), LidarError> {
        let ok = self.x_min < self.x_max && self.y_min < self.y_max && self.z_min < self.z_max;
        if ok {
            Ok(())
        } else {
            Err(LidarError::Invalid("region bounds need min < max on every axis".into()))
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (self.x_min..=self.x_max).contains(&p.x)
            && (self.y_min..=self.y_max).contains(&p.y)
            && (self.z_min..=self.z_max).contains(&p.z)
    }
}

/// Backing board and checkerboard dimensions. `rows` and `cols` count the
/// inner corners per column and per row; `length` runs along the rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoardGeometry {
    pub length: f64,
    pub width: f64,
    pub rows: usize,
    pub cols: usize,
    pub square: f64,
}

impl BoardGeometry {
    pub fn validate(&self) -> Result<(), LidarError> {
        if !(self.length > 0.0 && self.width > 0.0 && self.square > 0.0) {
            return Err(LidarError::Invalid("board dimensions must be positive".into()));
        }
        if self.rows < 2 || self.cols < 2 {
            return Err(LidarError::Invalid("checkerboard needs at least 2x2 inner corners".into()));
        }
        if !(self.length > self.cols as f64 * self.square && self.width > self.rows as f64 * self.square) {
            return Err(LidarError::Invalid("checkerboard does not fit on the backing board".into()));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        self.length.hypot(self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardLidarFeatures {
    /// Unit normal pointing from the board toward the lidar.
    pub normal: Vec3,
    pub centre: Vec3,
    /// Top, right, bottom and left corners as seen from the sensor.
    pub corners: [Vec3; 4],
    pub plane_inlier_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    pub threshold: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { threshold: 0.02, max_iters: 500, seed: 0 }
    }
}

pub fn crop_region(cloud: &PointCloud, b: &RegionBounds) -> Result<PointCloud, LidarError> {
    let cropped: PointCloud = cloud.iter().filter(|p| b.contains(&p.position)).copied().collect();
    if cropped.len() < MIN_REGION_POINTS {
        return Err(LidarError::EmptyRegion(cropped.len()));
    }
    Ok(cropped)
}

/// Drops stand points by keeping one board diagonal below the highest point.
pub fn remove_stand(cloud: &PointCloud, geo: &BoardGeometry) -> Result<PointCloud, LidarError> {
    let z_top = cloud
        .iter()
        .map(|p| p.position.z)
        .fold(f64::NEG_INFINITY, f64::max);
    if !z_top.is_finite() {
        return Err(LidarError::EmptyCloud);
    }
    let z_bottom = z_top - geo.diagonal();
    Ok(cloud
        .iter()
        .filter(|p| p.position.z >= z_bottom && p.position.z <= z_top)
        .copied()
        .collect())
}

/// Least-squares plane through points: centroid plus the eigenvector of the
/// scatter matrix with the smallest eigenvalue.
pub fn fit_plane_lsq<'a, I>(points: I) -> Option<Plane>
where
    I: IntoIterator<Item = &'a Vec3> + Clone,
{
    let (centroid, scatter, n) = scatter(points)?;
    if n < 3 {
        return None;
    }
    let eig = scatter.symmetric_eigen();
    let i = eig.eigenvalues.imin();
    let normal: Vec3 = eig.eigenvectors.column(i).into_owned().normalize();
    Some(Plane::from_point_normal(&centroid, &normal))
}

fn scatter<'a, I>(points: I) -> Option<(Vec3, Matrix3<f64>, usize)>
where
    I: IntoIterator<Item = &'a Vec3> + Clone,
{
    let mut sum = Vec3::zeros();
    let mut n = 0usize;
    for p in points.clone() {
        sum += p;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let centroid = sum / n as f64;
    let mut s = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        s += d * d.transpose();
    }
    Some((centroid, s, n))
}

fn orient_toward_origin(plane: Plane, centroid: &Vec3) -> Plane {
    if plane.normal.dot(centroid) > 0.0 {
        plane.flipped()
    } else {
        plane
    }
}

/// RANSAC plane fit followed by a least-squares refit on the consensus set.
/// The returned normal points toward the sensor origin.
pub fn ransac_plane(
    cloud: &PointCloud,
    threshold: f64,
    max_iters: usize,
    seed: u64,
) -> Result<(Plane, Vec<usize>), LidarError> {
    let pts: Vec<Vec3> = cloud.iter().map(|p| p.position).collect();
    if pts.len() < 3 {
        return Err(LidarError::DegenerateCloud);
    }
    let scale = pts.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..max_iters.max(1) {
        let i = rng.random_range(0..pts.len());
        let mut j = rng.random_range(0..pts.len() - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..pts.len() - 2);
        for taken in [i.min(j), i.max(j)] {
            if k >= taken {
                k += 1;
            }
        }
        let normal = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
        if normal.norm() <= 1e-12 * scale * scale {
            continue;
        }
        let plane = Plane::from_point_normal(&pts[i], &normal);
        let count = pts.iter().filter(|p| plane.signed_distance(p).abs() <= threshold).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, plane));
        }
    }
    let (_, plane) = best.ok_or(LidarError::DegenerateCloud)?;
    let inliers: Vec<usize> = (0..pts.len())
        .filter(|&i| plane.signed_distance(&pts[i]).abs() <= threshold)
        .collect();
    let refit = fit_plane_lsq(inliers.iter().map(|&i| &pts[i])).unwrap_or(plane);
    let centroid = inliers.iter().map(|&i| pts[i]).sum::<Vec3>() / inliers.len() as f64;
    Ok((orient_toward_origin(refit, &centroid), inliers))
}

pub fn project_to_plane(cloud: &PointCloud, plane: &Plane) -> PointCloud {
    cloud
        .iter()
        .map(|p| LidarPoint { position: plane.project(&p.position), ring: p.ring })
        .collect()
}

/// Per-ring extreme points. `min_y` holds the sensor's right-hand side of
/// the board (lidar y points left), `max_y` its left-hand side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgePoints {
    pub min_y: Vec<LidarPoint>,
    pub max_y: Vec<LidarPoint>,
    pub skipped_rings: Vec<u16>,
}

pub fn extract_edge_points(cloud: &PointCloud) -> Result<EdgePoints, LidarError> {
    let mut rings: BTreeMap<u16, Vec<&LidarPoint>> = BTreeMap::new();
    for p in cloud.iter() {
        rings.entry(p.ring).or_default().push(p);
    }
    let mut edges = EdgePoints::default();
    for (ring, pts) in rings {
        if pts.len() < 2 {
            warn!("lidar ring {ring} crosses the board with a single point, skipped");
            edges.skipped_rings.push(ring);
            continue;
        }
        let by_y = |a: &&&LidarPoint, b: &&&LidarPoint| a.position.y.total_cmp(&b.position.y);
        let lo = pts.iter().min_by(by_y).unwrap();
        let hi = pts.iter().max_by(by_y).unwrap();
        edges.min_y.push(**lo);
        edges.max_y.push(**hi);
    }
    if edges.min_y.len() < 2 {
        return Err(LidarError::TooFewRings(edges.min_y.len()));
    }
    Ok(edges)
}

/// Edge points split into the four board edges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeSets {
    pub top_min_y: Vec<Vec3>,
    pub bottom_min_y: Vec<Vec3>,
    pub top_max_y: Vec<Vec3>,
    pub bottom_max_y: Vec<Vec3>,
    /// Set when a side corner point had to be shared to reach two points on
    /// an edge; the neighbouring line fit is then biased by that point.
    pub low_confidence: bool,
}

/// Splits one side's points at its extreme-y point into the upper and lower
/// edge. The extreme point lies on only one of the two edges, so it is used
/// only by an edge that would otherwise have fewer than two points.
fn split_side(
    side: &[LidarPoint],
    extreme_is_min: bool,
    names: [&'static str; 2],
) -> Result<(Vec<Vec3>, Vec<Vec3>, bool), LidarError> {
    let corner_idx = side
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let o = a.position.y.total_cmp(&b.position.y);
            if extreme_is_min {
                o
            } else {
                o.reverse()
            }
        })
        .map(|(i, _)| i)
        .ok_or(LidarError::InsufficientEdgePoints { edge: names[0], count: 0 })?;
    let corner = side[corner_idx].position;
    let mut top = Vec::new();
    let mut bottom = Vec::new();
    for (i, p) in side.iter().enumerate() {
        if i == corner_idx {
            continue;
        }
        if p.position.z > corner.z {
            top.push(p.position);
        } else {
            bottom.push(p.position);
        }
    }
    let mut shared = false;
    for (set, name) in [(&mut top, names[0]), (&mut bottom, names[1])] {
        if set.len() < 2 {
            set.push(corner);
            shared = true;
        }
        if set.len() < 2 {
            return Err(LidarError::InsufficientEdgePoints { edge: name, count: set.len() });
        }
    }
    Ok((top, bottom, shared))
}

pub fn split_edges(edges: &EdgePoints) -> Result<EdgeSets, LidarError> {
    let (top_min_y, bottom_min_y, shared_a) =
        split_side(&edges.min_y, true, ["top/min-y", "bottom/min-y"])?;
    let (top_max_y, bottom_max_y, shared_b) =
        split_side(&edges.max_y, false, ["top/max-y", "bottom/max-y"])?;
    Ok(EdgeSets {
        top_min_y,
        bottom_min_y,
        top_max_y,
        bottom_max_y,
        low_confidence: shared_a || shared_b,
    })
}

/// Total least squares line: centroid and principal axis.
pub fn fit_line(points: &[Vec3]) -> Result<Line3, LidarError> {
    let (centroid, s, n) = scatter(points.iter()).ok_or(LidarError::DegeneratePoints)?;
    if n < 2 {
        return Err(LidarError::DegeneratePoints);
    }
    let eig = s.symmetric_eigen();
    let i = eig.eigenvalues.imax();
    if eig.eigenvalues[i].max(0.0).sqrt() < 1e-9 {
        return Err(LidarError::DegeneratePoints);
    }
    Ok(Line3::new(centroid, eig.eigenvectors.column(i).into_owned()))
}

/// Midpoint of the shortest segment joining two lines.
pub fn intersect_lines(a: &Line3, b: &Line3) -> Result<Vec3, LidarError> {
    let cross = a.direction.cross(&b.direction).norm();
    if cross <= 1e-6 {
        return Err(LidarError::ParallelLines);
    }
    let w0 = a.origin - b.origin;
    let bd = a.direction.dot(&b.direction);
    let d = a.direction.dot(&w0);
    let e = b.direction.dot(&w0);
    let denom = 1.0 - bd * bd;
    let s = (bd * e - d) / denom;
    let t = (e - bd * d) / denom;
    Ok((a.point_at(s) + b.point_at(t)) / 2.0)
}

/// Corners from the four edge sets, ordered top, right, bottom, left as seen
/// from the sensor.
pub fn corners_from_edges(sets: &EdgeSets) -> Result<[Vec3; 4], LidarError> {
    let top_r = fit_line(&sets.top_min_y)?;
    let bot_r = fit_line(&sets.bottom_min_y)?;
    let top_l = fit_line(&sets.top_max_y)?;
    let bot_l = fit_line(&sets.bottom_max_y)?;
    Ok([
        intersect_lines(&top_r, &top_l)?,
        intersect_lines(&top_r, &bot_r)?,
        intersect_lines(&bot_r, &bot_l)?,
        intersect_lines(&top_l, &bot_l)?,
    ])
}

/// Centre from corners: midpoint of the top-bottom diagonal.
pub fn centre_from_corners(corners: &[Vec3; 4]) -> Vec3 {
    (corners[0] + corners[2]) / 2.0
}

pub fn extract_board_features(
    cloud: &PointCloud,
    geo: &BoardGeometry,
    bounds: &RegionBounds,
    ransac: &RansacParams,
) -> Result<BoardLidarFeatures, LidarError> {
    geo.validate()?;
    bounds.validate()?;
    let region = crop_region(cloud, bounds)?;
    let board = remove_stand(&region, geo)?;
    let (plane, inliers) = ransac_plane(&board, ransac.threshold, ransac.max_iters, ransac.seed)?;
    let board = board.subset(&inliers);
    let plane_inlier_rms = (board
        .iter()
        .map(|p| plane.signed_distance(&p.position).powi(2))
        .sum::<f64>()
        / board.len() as f64)
        .sqrt();
    let projected = project_to_plane(&board, &plane);
    let edges = extract_edge_points(&projected)?;
    let sets = split_edges(&edges)?;
    if sets.low_confidence {
        warn!("board edge fitted through a shared corner point, corner estimate is low confidence");
    }
    let corners = corners_from_edges(&sets)?.map(|c| plane.project(&c));
    Ok(BoardLidarFeatures {
        normal: plane.normal,
        centre: centre_from_corners(&corners),
        corners,
        plane_inlier_rms,
    })
}
