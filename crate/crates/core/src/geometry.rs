//! Planar poses, rigid 3D transforms, pinhole intrinsics and covariance types.
//!
//! Conventions used throughout the crate:
//! - world frame is z-up with the floor at z = 0;
//! - angles are counterclockwise positive, zero along world +x, wrapped to (−π, π];
//! - camera optical frame is x right, y down, z forward.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = Vector3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("angle is not finite: {0}")]
    NonFiniteAngle(f64),
    #[error("rotation is not orthonormal with determinant +1 (deviation {0:e})")]
    InvalidRotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("covariance is not symmetric positive semi-definite: {0}")]
    InvalidCovariance(String),
}

/// Wraps an angle to (−π, π]. Non-finite input is rejected.
pub fn wrap_angle(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::NonFiniteAngle(a));
    }
    Ok(wrap(a))
}

/// Infallible variant of [`wrap_angle`] for values already known to be finite.
/// NaN propagates.
pub(crate) fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Planar robot pose. `theta` is kept wrapped to (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    /// `self ⊕ other`: `other` expressed in this pose's frame, mapped to world.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    /// Maps a point given in this pose's frame into the world frame.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Lifts the planar pose to a world-from-base transform at floor height.
    pub fn to_transform3(&self) -> RigidTransform3 {
        RigidTransform3 {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), self.theta).matrix(),
            translation: Vector3::new(self.x, self.y, 0.0),
        }
    }

    /// Planar projection of a world-from-base transform (yaw from the rotation's first column).
    pub fn from_transform3(t: &RigidTransform3) -> Pose2 {
        let r = &t.rotation;
        Pose2::new(t.translation.x, t.translation.y, r[(1, 0)].atan2(r[(0, 0)]))
    }
}

pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

pub fn invert(p: &Pose2) -> Pose2 {
    p.inverse()
}

/// World-from-sensor transform for a robot at `pose` carrying a sensor at `mount`
/// (base-from-sensor).
pub fn pose2_to_transform3(pose: &Pose2, mount: &RigidTransform3) -> RigidTransform3 {
    pose.to_transform3().compose(mount)
}

/// Proper rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform3 {
    /// Builds a transform, rejecting rotations that are not orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = rotation_deviation(&rotation);
        if !(dev <= ORTHONORMAL_TOL) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation(dev));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation built from roll (about x), pitch (about y), yaw (about z), applied in that order.
    pub fn from_euler(translation: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation,
        }
    }

    pub fn from_rotation(rotation: &Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform3) -> RigidTransform3 {
        RigidTransform3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform3 {
        let rt = self.rotation.transpose();
        RigidTransform3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle of the transform in radians, in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Max-abs deviation of `RᵀR` from identity combined with `|det R − 1|`.
    pub fn rotation_deviation(&self) -> f64 {
        rotation_deviation(&self.rotation)
    }

    /// Re-orthonormalizes the rotation through its nearest rotation matrix.
    pub(crate) fn renormalized(&self) -> RigidTransform3 {
        let r = Rotation3::from_matrix(&self.rotation);
        RigidTransform3 {
            rotation: *r.matrix(),
            translation: self.translation,
        }
    }
}

fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    let det = (r.determinant() - 1.0).abs();
    if ortho.is_nan() || det.is_nan() {
        return f64::INFINITY;
    }
    ortho.max(det)
}

/// Pinhole camera model. Pixel `(u, v)` is column `u`, row `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub max_depth: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        max_depth: f64,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            max_depth,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Centered intrinsics from a horizontal field of view, square pixels.
    pub fn from_fov(width: usize, height: usize, hfov: f64, max_depth: f64) -> Self {
        let f = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            max_depth,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be nonzero");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx outside image");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy outside image");
        }
        if !(self.max_depth > 0.0 && self.max_depth.is_finite()) {
            return bad("max_depth must be positive");
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame ray through pixel `(u, v)` scaled to unit depth (z = 1).
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Symmetric PSD 3×3 covariance over (x, y, θ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(Matrix3<f64>);

impl Covariance3 {
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let asym = (m - m.transpose()).amax();
        if !(asym <= SYMMETRY_TOL) {
            return Err(GeometryError::InvalidCovariance(format!("asymmetry {asym:e}")));
        }
        let min_eig = min_eigenvalue(&m);
        if !(min_eig >= -PSD_TOL) {
            return Err(GeometryError::InvalidCovariance(format!(
                "minimum eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self(m))
    }

    pub fn from_diagonal(var_x: f64, var_y: f64, var_theta: f64) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_diagonal(&Vector3::new(var_x, var_y, var_theta)))
    }

    pub fn zeros() -> Self {
        Self(Matrix3::zeros())
    }

    /// Symmetrizes `m` without checking definiteness. Used for filter
    /// internals where PSD holds up to round-off.
    pub(crate) fn symmetrized(m: Matrix3<f64>) -> Self {
        Self((m + m.transpose()) * 0.5)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }
}

fn min_eigenvalue(m: &Matrix3<f64>) -> f64 {
    if !m.iter().all(|v| v.is_finite()) {
        return f64::NAN;
    }
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}
