//! Surface and volume primitives and the preprocessing pipeline.

mod bvh;
mod mesh;
mod polygonize;
mod preprocess;
mod register;
mod sdf;
mod transform;

pub use bvh::{closest_point_on_triangle, TriangleBvh};
pub use mesh::{icosphere_directions, TriangleMesh};
pub use polygonize::polygonize;
pub use preprocess::{crop_to_common_box, smooth_sdf};
pub use register::{rigid_register, RegistrationResult};
pub use sdf::{mesh_to_sdf, project_to_surface, sdf_on_grid, SignedDistanceVolume, VolumeHeader};
pub use transform::{best_rigid_fit, RigidTransform};

/// 3D point or vector in millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Axis-aligned bounds of a point set.
pub fn bounds(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}
