use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::cloud::Vec3;

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    /// Rotation by `yaw` radians about +z, then translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let rotation = *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix();
        RigidTransform { rotation, translation }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_all(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Heading of the rotated x axis in the xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).amax() <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|c| c.is_finite())
    }

    /// Homogeneous 4x4 matrix, row major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn from_row_major(m: &[f64; 16]) -> Self {
        RigidTransform {
            rotation: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vector3::new(m[3], m[7], m[11]),
        }
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = a.rem_euclid(two_pi);
    if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}
