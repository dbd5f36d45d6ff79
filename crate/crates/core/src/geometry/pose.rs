use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Tolerance for accepting a raw quaternion as unit.
pub const UNIT_QUAT_TOL: f64 = 1e-9;

/// Rigid camera-to-world transform: unit quaternion `(w, x, y, z)` with the
/// Hamilton product convention, plus a translation in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Quaternion components `(w, x, y, z)`, unit norm.
    pub q: [f64; 4],
    /// Translation in meters (the camera center in the world frame).
    pub t: [f64; 3],
}

impl Pose {
    /// Build from raw components, rejecting quaternions whose norm deviates
    /// from 1 by more than [`UNIT_QUAT_TOL`]. The stored quaternion is
    /// renormalized exactly.
    pub fn new(q: [f64; 4], t: [f64; 3]) -> Result<Pose, GeometryError> {
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if (norm - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        Ok(Pose {
            q: [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm],
            t,
        })
    }

    /// Build from components, renormalizing whatever norm the quaternion has.
    /// Used where the producer guarantees only approximate unit norm (e.g.
    /// f32 model output).
    pub fn from_unnormalized(q: [f64; 4], t: [f64; 3]) -> Result<Pose, GeometryError> {
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        Ok(Pose {
            q: [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm],
            t,
        })
    }

    pub fn identity() -> Pose {
        Pose {
            q: [1.0, 0.0, 0.0, 0.0],
            t: [0.0; 3],
        }
    }

    pub fn from_parts(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Pose {
        let qq = q.into_inner();
        Pose {
            q: [qq.w, qq.i, qq.j, qq.k],
            t: [t.x, t.y, t.z],
        }
    }

    pub fn quat(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(Quaternion::new(
            self.q[0], self.q[1], self.q[2], self.q[3],
        ))
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.t[0], self.t[1], self.t[2])
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.quat().to_rotation_matrix().into_inner()
    }

    /// Apply the transform to a point: `R p + t`.
    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.quat() * p + self.translation()
    }

    /// Rotate a direction (no translation).
    pub fn rotate(&self, d: Vector3<f64>) -> Vector3<f64> {
        self.quat() * d
    }

    /// Rotation angle to another pose, in degrees.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        (self.quat().inverse() * other.quat()).angle().to_degrees()
    }

    /// Pose whose rotation is `R` of a look-at camera: +z toward `target`,
    /// image rows increasing along world "down" (y-up world convention).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Pose {
        let z = (target - eye).normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // Looking straight along `up`; pick any perpendicular axis.
            x = z.cross(&Vector3::new(1.0, 0.0, 0.0));
            if x.norm() < 1e-9 {
                x = z.cross(&Vector3::new(0.0, 0.0, 1.0));
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rot = Matrix3::from_columns(&[x, y, z]);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        Pose::from_parts(q, eye)
    }

    /// Exact conversion of an orthonormal matrix to a pose rotation.
    pub fn from_rotation(rot: Matrix3<f64>, t: Vector3<f64>) -> Pose {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        Pose::from_parts(q, t)
    }
}

/// Rigid composition `a ∘ b`: apply `b` first, then `a`. The output
/// quaternion is renormalized.
pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    let q = a.quat() * b.quat();
    let t = a.quat() * b.translation() + a.translation();
    Pose::from_parts(UnitQuaternion::from_quaternion(q.into_inner()), t)
}

/// Inverse transform: `compose(a, inverse(a))` is the identity.
pub fn pose_inverse(a: &Pose) -> Pose {
    let qi = a.quat().inverse();
    let t = -(qi * a.translation());
    Pose::from_parts(qi, t)
}
