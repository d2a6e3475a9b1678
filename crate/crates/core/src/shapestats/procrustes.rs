use crate::geometry::{best_rigid_fit, RigidTransform, Vec3};
use crate::{Error, Result};

use super::CorrespondenceModel;

const MAX_ITERS: usize = 200;
const TOLERANCE: f64 = 1e-9;

/// Output of generalized Procrustes alignment.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub model: CorrespondenceModel,
    /// Per-shape transforms; aligned points are `scale · R x + t`.
    pub transforms: Vec<RigidTransform>,
    /// All 1.0 unless scaling was requested.
    pub scales: Vec<f64>,
    /// Sum of squared distances to the current mean after each iteration.
    pub residuals: Vec<f64>,
}

/// Rigid generalized Procrustes alignment.
pub fn procrustes_align(model: &CorrespondenceModel) -> Result<Alignment> {
    procrustes_align_with(model, false)
}

/// Generalized Procrustes alignment: repeatedly aligns every shape to the
/// running mean until the mean moves less than 1e-9 mm. With `scaling`,
/// shapes are also isotropically scaled and the mean is kept at the average
/// input size.
pub fn procrustes_align_with(model: &CorrespondenceModel, scaling: bool) -> Result<Alignment> {
    let n = model.num_shapes();
    let m = model.num_points();
    let mut sizes = Vec::with_capacity(n);
    for (i, row) in model.points().iter().enumerate() {
        let size = centroid_size(row);
        if !(size > 1e-12) {
            return Err(Error::Degenerate(format!(
                "all points of sample `{}` coincide",
                model.ids()[i]
            )));
        }
        sizes.push(size);
    }
    let mean_size = sizes.iter().sum::<f64>() / n as f64;

    let mut mean = centered(model.shape(0));
    if scaling {
        let s = mean_size / centroid_size(&mean);
        mean.iter_mut().for_each(|p| *p *= s);
    }
    let mut transforms = vec![RigidTransform::identity(); n];
    let mut scales = vec![1.0; n];
    let mut aligned: Vec<Vec<Vec3>> = model.points().to_vec();
    let mut residuals = Vec::new();
    for _ in 0..MAX_ITERS {
        for i in 0..n {
            let src = model.shape(i);
            let (xf, _) = best_rigid_fit(src, &mean)?;
            let mut scale = 1.0;
            let mut xf = xf;
            if scaling {
                let cs = src.iter().sum::<Vec3>() / m as f64;
                let cm = mean.iter().sum::<Vec3>() / m as f64;
                let num: f64 = src
                    .iter()
                    .zip(&mean)
                    .map(|(x, y)| (y - cm).dot(&(xf.rotation * (x - cs))))
                    .sum();
                let den: f64 = src.iter().map(|x| (x - cs).norm_squared()).sum();
                scale = num / den;
                xf.translation = cm - scale * (xf.rotation * cs);
            }
            aligned[i] = src.iter().map(|p| scale * (xf.rotation * p) + xf.translation).collect();
            transforms[i] = xf;
            scales[i] = scale;
        }
        let mut next: Vec<Vec3> = (0..m)
            .map(|k| aligned.iter().map(|r| r[k]).sum::<Vec3>() / n as f64)
            .collect();
        if scaling {
            let c = next.iter().sum::<Vec3>() / m as f64;
            let s = mean_size / centroid_size(&next);
            next.iter_mut().for_each(|p| *p = c + s * (*p - c));
        }
        let residual: f64 = aligned
            .iter()
            .map(|r| r.iter().zip(&next).map(|(p, q)| (p - q).norm_squared()).sum::<f64>())
            .sum();
        residuals.push(residual);
        let moved = mean.iter().zip(&next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        mean = next;
        if moved < TOLERANCE {
            break;
        }
    }
    let out = CorrespondenceModel::new(model.method(), model.ids().to_vec(), aligned)?;
    Ok(Alignment { model: out, transforms, scales, residuals })
}

fn centered(points: &[Vec3]) -> Vec<Vec3> {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    points.iter().map(|p| p - c).collect()
}

/// Root mean squared distance to the centroid.
fn centroid_size(points: &[Vec3]) -> f64 {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / points.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cloud(seed: u64, m: usize) -> Vec<Vec3> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn model(rows: Vec<Vec<Vec3>>) -> CorrespondenceModel {
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        CorrespondenceModel::new("t", ids, rows).unwrap()
    }

    #[test]
    fn aligned_input_gives_identity_transforms() {
        let base = centered(&cloud(1, 20));
        let r = procrustes_align(&model(vec![base.clone(), base.clone(), base])).unwrap();
        for xf in &r.transforms {
            assert!(xf.angle() < 1e-9 && xf.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn recovers_relative_rotation() {
        let base = cloud(2, 30);
        let rot = RigidTransform::from_axis_angle(Vec3::new(0.3, 1.0, -0.2), 15f64.to_radians(), Vec3::new(4.0, 0.0, 1.0));
        let rotated: Vec<Vec3> = base.iter().map(|p| rot.apply(p)).collect();
        let r = procrustes_align(&model(vec![base, rotated])).unwrap();
        let rel = r.transforms[1].inverse().compose(&r.transforms[0]);
        assert!((rel.angle() - 15f64.to_radians()).abs() < 1e-6);
        let a = r.model.shape(0);
        let b = r.model.shape(1);
        assert!(a.iter().zip(b).all(|(p, q)| (p - q).norm() < 1e-6));
    }

    #[test]
    fn residual_trace_never_increases() {
        let rows: Vec<Vec<Vec3>> = (0..6)
            .map(|s| {
                let xf = RigidTransform::from_axis_angle(Vec3::new(1.0, s as f64, 0.5), 0.4 * s as f64, Vec3::repeat(s as f64));
                let noise = cloud(100 + s, 25);
                cloud(3, 25).iter().zip(&noise).map(|(p, e)| xf.apply(&(p + 0.2 * e))).collect()
            })
            .collect();
        let r = procrustes_align(&model(rows)).unwrap();
        for w in r.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn scaling_removes_size_difference() {
        let base = cloud(4, 20);
        let big: Vec<Vec3> = base.iter().map(|p| 2.0 * p).collect();
        let r = procrustes_align_with(&model(vec![base, big]), true).unwrap();
        assert!((r.scales[0] / r.scales[1] - 2.0).abs() < 1e-9);
        let (a, b) = (r.model.shape(0), r.model.shape(1));
        assert!(a.iter().zip(b).all(|(p, q)| (p - q).norm() < 1e-9));
    }

    #[test]
    fn coincident_points_rejected() {
        let r = procrustes_align(&model(vec![cloud(5, 4), vec![Vec3::repeat(1.0); 4]]));
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }
}
