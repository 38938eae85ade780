//! 3D math shared by every stage: rotations, rigid transforms, planes,
//! lines, the camera forward model and the calibration error metrics.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when checking rotation validity.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("rotation is at gimbal lock (|sin(theta_y)| = {0:.12})")]
    GimbalLock(f64),
    #[error("matrix is singular and has no nearest rotation")]
    Singular,
    #[error("point ({0:.4}, {1:.4}, {2:.4}) cannot be projected: behind the camera")]
    BehindCamera(f64, f64, f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Euler angles in radians. The rotation is composed about the moving
/// axes x, then y, then z: `R = Rx(theta_x) * Ry(theta_y) * Rz(theta_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EulerXYZ {
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl EulerXYZ {
    pub fn new(theta_x: f64, theta_y: f64, theta_z: f64) -> Self {
        Self { theta_x, theta_y, theta_z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.theta_x, self.theta_y, self.theta_z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_rotation(self) -> Mat3 {
        euler_to_rot(self)
    }
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_rot(e: EulerXYZ) -> Mat3 {
    rot_x(e.theta_x) * rot_y(e.theta_y) * rot_z(e.theta_z)
}

/// Maps an angle from `[-pi, pi]` into `(-pi, pi]`.
fn half_open(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Wraps any angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    half_open((a + PI).rem_euclid(2.0 * PI) - PI)
}

pub fn rot_to_euler(r: &Mat3) -> Result<EulerXYZ, GeomError> {
    // R[0][2] = sin(theta_y) for the x-y-z composition.
    let sy = r[(0, 2)];
    if sy.abs() >= 1.0 - ROTATION_TOL {
        return Err(GeomError::GimbalLock(sy));
    }
    let theta_y = sy.clamp(-1.0, 1.0).asin();
    let theta_x = half_open((-r[(1, 2)]).atan2(r[(2, 2)]));
    let theta_z = half_open((-r[(0, 1)]).atan2(r[(0, 0)]));
    Ok(EulerXYZ { theta_x, theta_y, theta_z })
}

/// True when `r` is orthonormal with determinant +1 within `tol`.
pub fn is_rotation(r: &Mat3, tol: f64) -> bool {
    let ortho = (r.transpose() * r - Mat3::identity()).norm();
    ortho <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// Nearest rotation in the Frobenius norm.
pub fn project_to_so3(m: &Mat3) -> Result<Mat3, GeomError> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeomError::Singular),
    };
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !smin.is_finite() || smin <= smax * 1e-12 {
        return Err(GeomError::Singular);
    }
    let d = (u * v_t).determinant().signum();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    Ok(u * fix * v_t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_euler(e: EulerXYZ, translation: Vec3) -> Self {
        Self::new(euler_to_rot(e), translation)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, n: &Vec3) -> Vec3 {
        self.rotation * n
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        h
    }
}

pub fn apply(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.apply(p)
}

pub fn rotate_only(t: &RigidTransform, n: &Vec3) -> Vec3 {
    t.rotate(n)
}

/// Euclidean distance between two translations, in metres.
pub fn translation_error(t_true: &Vec3, t_est: &Vec3) -> f64 {
    (t_true - t_est).norm()
}

/// `||I - R_true^-1 R_est||_F`; equals `2*sqrt(2)*sin(angle/2)`.
pub fn rotation_error(r_true: &Mat3, r_est: &Mat3) -> f64 {
    (Mat3::identity() - r_true.transpose() * r_est).norm()
}

/// Relative rotation angle in radians.
pub fn rotation_angle(r_true: &Mat3, r_est: &Mat3) -> f64 {
    let c = ((r_true.transpose() * r_est).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

/// Angle between two vectors in radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Rotation that turns `from` into `to` about an axis given as a rotation vector.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    Rotation3::new(axis.normalize() * angle).into_inner()
}

/// Element-wise average of rotation matrices projected back onto SO(3).
pub fn chordal_mean<'a, I>(rotations: I) -> Result<Mat3, GeomError>
where
    I: IntoIterator<Item = &'a Mat3>,
{
    let mut sum = Mat3::zeros();
    let mut count = 0usize;
    for r in rotations {
        sum += r;
        count += 1;
    }
    if count == 0 {
        return Err(GeomError::Singular);
    }
    project_to_so3(&(sum / count as f64))
}

/// `{x : normal . x + offset = 0}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn from_point_normal(point: &Vec3, normal: &Vec3) -> Self {
        let n = normal.normalize();
        Self::new(n, -n.dot(point))
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn project(&self, p: &Vec3) -> Vec3 {
        p - self.normal * self.signed_distance(p)
    }

    pub fn flipped(&self) -> Self {
        Self::new(-self.normal, -self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line3 {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Line3 {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self { origin, direction: direction.normalize() }
    }

    pub fn through(a: &Vec3, b: &Vec3) -> Self {
        Self::new(*a, b - a)
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        self.origin + self.direction * s
    }

    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let d = p - self.origin;
        (d - self.direction * d.dot(&self.direction)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraModel {
    Pinhole,
    Fisheye,
}

/// Lens distortion. Pinhole coefficients follow the OpenCV order
/// `[k1, k2, p1, p2, k3]`; fisheye is the equidistant model `[k1, k2, k3, k4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distortion {
    RadialTangential { k1: f64, k2: f64, p1: f64, p2: f64, k3: f64 },
    Equidistant { k: [f64; 4] },
}

impl Distortion {
    pub fn none(model: CameraModel) -> Self {
        match model {
            CameraModel::Pinhole => {
                Distortion::RadialTangential { k1: 0.0, k2: 0.0, p1: 0.0, p2: 0.0, k3: 0.0 }
            }
            CameraModel::Fisheye => Distortion::Equidistant { k: [0.0; 4] },
        }
    }

    pub fn from_coefficients(model: CameraModel, c: &[f64]) -> Result<Self, GeomError> {
        match (model, c.len()) {
            (CameraModel::Pinhole, 5) => Ok(Distortion::RadialTangential {
                k1: c[0],
                k2: c[1],
                p1: c[2],
                p2: c[3],
                k3: c[4],
            }),
            (CameraModel::Fisheye, 4) => Ok(Distortion::Equidistant { k: [c[0], c[1], c[2], c[3]] }),
            (m, n) => Err(GeomError::InvalidIntrinsics(format!(
                "{m:?} model expects {} distortion coefficients, got {n}",
                if m == CameraModel::Pinhole { 5 } else { 4 }
            ))),
        }
    }

    pub fn coefficients(&self) -> Vec<f64> {
        match *self {
            Distortion::RadialTangential { k1, k2, p1, p2, k3 } => vec![k1, k2, p1, p2, k3],
            Distortion::Equidistant { k } => k.to_vec(),
        }
    }

    pub fn model(&self) -> CameraModel {
        match self {
            Distortion::RadialTangential { .. } => CameraModel::Pinhole,
            Distortion::Equidistant { .. } => CameraModel::Fisheye,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: Distortion,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, distortion: Distortion) -> Result<Self, GeomError> {
        let k = Self { fx, fy, cx, cy, distortion };
        k.validate()?;
        Ok(k)
    }

    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, distortion: Distortion::none(CameraModel::Pinhole) }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .into_iter()
            .chain(self.distortion.coefficients())
            .all(f64::is_finite);
        if !finite {
            return Err(GeomError::InvalidIntrinsics("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> CameraModel {
        self.distortion.model()
    }

    /// Same focal lengths and principal point, distortion removed.
    pub fn undistorted(&self) -> Self {
        Self { distortion: Distortion::none(self.model()), ..*self }
    }

    /// Normalized (undistorted) coordinates to distorted normalized coordinates,
    /// for the pinhole model only. Fisheye distortion acts on 3D rays.
    pub fn distort_normalized(&self, x: f64, y: f64) -> Vec2 {
        match self.distortion {
            Distortion::RadialTangential { k1, k2, p1, p2, k3 } => {
                let r2 = x * x + y * y;
                let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
                let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
                let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
                Vec2::new(xd, yd)
            }
            Distortion::Equidistant { .. } => self.fisheye_distort_ray(&Vec3::new(x, y, 1.0)),
        }
    }

    fn fisheye_distort_ray(&self, p: &Vec3) -> Vec2 {
        let k = match self.distortion {
            Distortion::Equidistant { k } => k,
            _ => unreachable!("fisheye_distort_ray on a pinhole model"),
        };
        let r = (p.x * p.x + p.y * p.y).sqrt();
        if r < 1e-15 {
            return Vec2::zeros();
        }
        let theta = r.atan2(p.z);
        let t2 = theta * theta;
        let theta_d = theta * (1.0 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3]))));
        Vec2::new(theta_d * p.x / r, theta_d * p.y / r)
    }

    pub fn normalized_to_pixel(&self, xd: &Vec2) -> Vec2 {
        Vec2::new(self.fx * xd.x + self.cx, self.fy * xd.y + self.cy)
    }

    pub fn pixel_to_normalized(&self, uv: &Vec2) -> Vec2 {
        Vec2::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy)
    }

    /// Forward camera model: camera-frame point to pixel.
    pub fn project(&self, p: &Vec3) -> Result<Vec2, GeomError> {
        let xd = match self.distortion {
            Distortion::RadialTangential { .. } => {
                if !(p.z > 0.0) {
                    return Err(GeomError::BehindCamera(p.x, p.y, p.z));
                }
                self.distort_normalized(p.x / p.z, p.y / p.z)
            }
            Distortion::Equidistant { .. } => {
                if p.norm() == 0.0 || !p.norm().is_finite() {
                    return Err(GeomError::BehindCamera(p.x, p.y, p.z));
                }
                self.fisheye_distort_ray(p)
            }
        };
        Ok(self.normalized_to_pixel(&xd))
    }
}

pub fn project_point_to_image(p_cam: &Vec3, k: &CameraIntrinsics) -> Result<Vec2, GeomError> {
    k.project(p_cam)
}
