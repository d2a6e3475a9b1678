use serde::{Deserialize, Serialize};

use super::{best_rigid_fit, RigidTransform, TriangleBvh, TriangleMesh, Vec3};
use crate::Result;

const MAX_POINTS: usize = 2000;
const MAX_ITERS: usize = 200;

/// Outcome of iterative closest point registration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps the moving mesh onto the reference.
    pub transform: RigidTransform,
    /// Mean squared closest-point distance at `transform` (mm²).
    pub residual: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out; `transform` is then the best
    /// one seen.
    pub converged: bool,
}

/// Rigid ICP of `moving` onto `reference`, starting from centroid alignment.
pub fn rigid_register(moving: &TriangleMesh, reference: &TriangleMesh) -> Result<RegistrationResult> {
    let stride = moving.vertices().len().div_ceil(MAX_POINTS);
    let src: Vec<Vec3> = moving.vertices().iter().step_by(stride).copied().collect();
    let bvh = TriangleBvh::new(reference);
    let mse = |xf: &RigidTransform| -> (f64, Vec<Vec3>) {
        let mut total = 0.0;
        let targets = src
            .iter()
            .map(|p| {
                let (d2, _, q) = bvh.closest_point(&xf.apply(p));
                total += d2;
                q
            })
            .collect();
        (total / src.len() as f64, targets)
    };

    let mut xf = RigidTransform::translation(reference.centroid() - moving.centroid());
    let (mut err, mut targets) = mse(&xf);
    let mut best = (err, xf.clone());
    for it in 1..=MAX_ITERS {
        let (next, _) = best_rigid_fit(&src, &targets)?;
        let (next_err, next_targets) = mse(&next);
        let step = next.compose(&xf.inverse());
        if next_err < best.0 {
            best = (next_err, next.clone());
        }
        let small_motion = step.angle() < 1e-10 && step.translation.norm() < 1e-10;
        let stalled = (err - next_err).abs() <= 1e-9 * err.max(1e-30);
        xf = next;
        err = next_err;
        targets = next_targets;
        if small_motion || stalled || err < 1e-24 {
            return Ok(RegistrationResult {
                transform: best.1,
                residual: best.0,
                iterations: it,
                converged: true,
            });
        }
    }
    log::warn!("rigid registration stopped after {MAX_ITERS} iterations (residual {:.3e})", best.0);
    Ok(RegistrationResult {
        transform: best.1,
        residual: best.0,
        iterations: MAX_ITERS,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> TriangleMesh {
        TriangleMesh::ellipsoid(2, Vec3::new(3.0, 2.0, 1.2), Vec3::new(0.5, 0.0, 0.0))
    }

    #[test]
    fn identical_meshes_give_identity() {
        let m = shape();
        let r = rigid_register(&m, &m).unwrap();
        assert!(r.transform.angle() < 1e-6);
        assert!(r.transform.translation.norm() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn recovers_known_motion() {
        let m = shape();
        let truth = RigidTransform::from_axis_angle(Vec3::z(), 10f64.to_radians(), Vec3::new(1.0, 2.0, 3.0));
        let reference = m.transformed(&truth);
        let r = rigid_register(&m, &reference).unwrap();
        let diff = r.transform.compose(&truth.inverse());
        assert!(diff.angle() < 1e-3, "angle {}", diff.angle());
        assert!((r.transform.translation - truth.translation).norm() < 1e-3);
        // registering back gives the inverse
        let back = rigid_register(&reference, &m).unwrap();
        assert!(back.transform.compose(&truth).angle() < 1e-3);
    }

    #[test]
    fn different_shapes_leave_residual() {
        let a = shape();
        let b = TriangleMesh::icosphere(2, 1.7, Vec3::zeros());
        let r = rigid_register(&a, &b).unwrap();
        assert!(r.residual > 0.0);
        assert!(r.transform.is_valid());
    }
}
