use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::{Error, Result};

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, snapping the rotation to the nearest proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: orthonormalize(&rotation),
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        (((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
    }

    /// `‖RᵀR − I‖∞`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max()
    }

    pub fn is_valid(&self) -> bool {
        self.orthonormality_error() < 1e-9 && (self.rotation.determinant() - 1.0).abs() < 1e-9
    }
}

/// Nearest proper rotation in the Frobenius sense.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Least-squares rigid map taking `source[i]` to `target[i]` (Kabsch).
///
/// Returns the transform and the mean squared residual.
pub fn best_rigid_fit(source: &[Vec3], target: &[Vec3]) -> Result<(RigidTransform, f64)> {
    if source.len() != target.len() || source.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "rigid fit needs equal nonempty point sets, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vec3>() / n;
    let ct = target.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, if d < 0.0 { -1.0 } else { 1.0 }));
    let r = v * fix * u.transpose();
    let xf = RigidTransform::new(r, ct - r * cs);
    let mse = source
        .iter()
        .zip(target)
        .map(|(s, t)| (xf.apply(s) - t).norm_squared())
        .sum::<f64>()
        / n;
    Ok((xf, mse))
}
