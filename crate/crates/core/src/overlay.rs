//! Projecting a lidar scan into the image with a candidate extrinsic.

use crate::geom::{CameraIntrinsics, RigidTransform, Vec2};
use crate::io::Image;
use crate::lidar_features::PointCloud;
use crate::sim::ImageSize;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    /// Distance from the camera, metres.
    pub range: f64,
}

/// Projects every point in front of the camera that lands inside the image.
pub fn project_cloud(cloud: &PointCloud, ext: &RigidTransform, k: &CameraIntrinsics, image: ImageSize) -> Vec<ProjectedPoint> {
    cloud
        .iter()
        .filter_map(|p| {
            let c = ext.apply(&p.position);
            if c.z <= 0.0 {
                return None;
            }
            let uv = k.project(&c).ok()?;
            image.contains(&uv).then_some(ProjectedPoint { u: uv.x, v: uv.y, range: c.norm() })
        })
        .collect()
}

/// Linear ramp from red at `near` to blue at `far`.
pub fn range_colour(range: f64, near: f64, far: f64) -> [u8; 3] {
    let t = if far > near { ((range - near) / (far - near)).clamp(0.0, 1.0) } else { 0.0 };
    [(255.0 * (1.0 - t)).round() as u8, 0, (255.0 * t).round() as u8]
}

/// Draws each point as a 3x3 dot coloured by range over `background`.
pub fn render_overlay(points: &[ProjectedPoint], mut background: Image) -> Image {
    let near = points.iter().map(|p| p.range).fold(f64::INFINITY, f64::min);
    let far = points.iter().map(|p| p.range).fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (background.width as i64, background.height as i64);
    for p in points {
        let colour = range_colour(p.range, near, far);
        let (cu, cv) = (p.u.floor() as i64, p.v.floor() as i64);
        for dv in -1..=1 {
            for du in -1..=1 {
                let (x, y) = (cu + du, cv + dv);
                if (0..w).contains(&x) && (0..h).contains(&y) {
                    background.set(x as u32, y as u32, colour);
                }
            }
        }
    }
    background
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: &Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
    }
    inside
}
