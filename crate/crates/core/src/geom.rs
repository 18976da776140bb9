//! Rigid-body and pinhole camera geometry.
//!
//! Quaternions use `(w, x, y, z)` component order everywhere, including the
//! JSON pose schema. Angles cross the public API in degrees.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Unit-norm copy; fails on zero or non-finite input.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidInput(format!(
                "quaternion {:?} cannot be normalized",
                self.to_array()
            )));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Exponential map of a rotation vector (radians) onto the unit sphere.
    ///
    /// Used for tangent-space pose updates and seeded perturbations.
    pub fn exp(tangent: &Vector3<f64>) -> Self {
        let angle = tangent.norm();
        let half = 0.5 * angle;
        // sin(half)/angle, with the small-angle series below 1e-8
        let k = if angle < 1e-8 { 0.5 - angle * angle / 48.0 } else { half.sin() / angle };
        Self::new(half.cos(), k * tangent.x, k * tangent.y, k * tangent.z)
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_rotation(&self) -> Result<Matrix3<f64>> {
        Ok(self.normalized()?.rotation_unchecked())
    }

    /// Rotation matrix assuming `self` is already unit-norm.
    pub fn rotation_unchecked(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Rotates `v` by the unit quaternion `self`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product; `a * b` applies `b` first.
    fn mul(self, b: Quaternion) -> Quaternion {
        let a = self;
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Rotation matrix from a (not necessarily unit) quaternion.
pub fn quat_to_rotation(q: &Quaternion) -> Result<Matrix3<f64>> {
    q.to_rotation()
}

/// Geodesic angle between two rotations, in degrees within `[0, 180]`.
///
/// Invariant to the sign of either quaternion. Evaluated with `atan2` on the
/// relative rotation so small angles keep full precision.
pub fn rotation_angle_between(q1: &Quaternion, q2: &Quaternion) -> Result<f64> {
    let a = q1.normalized()?;
    let b = q2.normalized()?;
    let rel = a.conjugate() * b;
    let half = rel.vector().norm().atan2(rel.w.abs());
    Ok((2.0 * half).to_degrees().min(180.0))
}

/// Object-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Result<Self> {
        Ok(Self { rotation: rotation.normalized()?, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Quaternion::IDENTITY, translation: Vector3::zeros() }
    }

    pub fn rotation(&self) -> Quaternion {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.rotation_unchecked()
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.conjugate();
        Self { rotation: r, translation: -r.rotate(&self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        let rotation = (self.rotation * other.rotation)
            .normalized()
            .unwrap_or(Quaternion::IDENTITY);
        Self { rotation, translation: self.rotation.rotate(&other.translation) + self.translation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, px: f64, py: f64) -> Result<Self> {
        let k = Self { fx, fy, px, py };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.px.is_finite() && self.py.is_finite()) {
            return Err(Error::InvalidInput("principal point must be finite".into()));
        }
        Ok(())
    }

    pub fn project(&self, t: &Vector3<f64>) -> Result<Vector2<f64>> {
        project(t, self)
    }

    /// Direction (z = 1) of the viewing ray through pixel coordinates `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.px) / self.fx, (v - self.py) / self.fy, 1.0)
    }
}

/// Pinhole projection of a camera-frame point to pixel coordinates.
pub fn project(t: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if !(t.z > 0.0) {
        return Err(Error::BehindCamera(t.z));
    }
    Ok(Vector2::new(k.fx * t.x / t.z + k.px, k.fy * t.y / t.z + k.py))
}

/// Recovers the 3D point that projects to `center` at depth `tz`.
pub fn backproject_center(center: &Vector2<f64>, tz: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(tz > 0.0 && tz.is_finite()) {
        return Err(Error::InvalidDepth(tz));
    }
    Ok(Vector3::new((center.x - k.px) * tz / k.fx, (center.y - k.py) * tz / k.fy, tz))
}
