use nalgebra::{DMatrix, Matrix3, Matrix3x4};

use crate::geometry::Vec3;
use crate::{Error, Result};

/// 3D thin-plate spline with kernel U(r) = r and an affine part.
#[derive(Clone, Debug)]
pub struct ThinPlateSpline {
    source: Vec<Vec3>,
    /// One bending weight per landmark.
    weights: Vec<Vec3>,
    /// Columns: constant, x, y, z coefficients.
    affine: Matrix3x4<f64>,
}

impl ThinPlateSpline {
    /// Solves the bordered system `[K P; Pᵀ 0] [w; a] = [y; 0]`.
    pub fn fit(source: &[Vec3], target: &[Vec3]) -> Result<Self> {
        let m = source.len();
        if m != target.len() {
            return Err(Error::InvalidParameter(format!("{m} source and {} target landmarks", target.len())));
        }
        if m < 4 {
            return Err(Error::InvalidParameter("thin-plate spline needs at least 4 landmarks".into()));
        }
        let c = source.iter().sum::<Vec3>() / m as f64;
        let mut scatter = Matrix3::zeros();
        for p in source {
            scatter += (p - c) * (p - c).transpose();
        }
        let sv = scatter.symmetric_eigenvalues();
        if sv.min() <= 1e-12 * sv.max().max(f64::MIN_POSITIVE) {
            return Err(Error::Singular("source landmarks are coplanar or coincident".into()));
        }
        let size = m + 4;
        let mut a = DMatrix::zeros(size, size);
        let mut rhs = DMatrix::zeros(size, 3);
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] = (source[i] - source[j]).norm();
            }
            let row = [1.0, source[i].x, source[i].y, source[i].z];
            for (k, v) in row.iter().enumerate() {
                a[(i, m + k)] = *v;
                a[(m + k, i)] = *v;
            }
            for d in 0..3 {
                rhs[(i, d)] = target[i][d];
            }
        }
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("thin-plate spline system is singular".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("thin-plate spline system is singular".into()));
        }
        let weights = (0..m).map(|i| Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)])).collect();
        let affine = Matrix3x4::from_fn(|d, k| sol[(m + k, d)]);
        Ok(Self { source: source.to_vec(), weights, affine })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let mut out = self.affine.column(0) + self.affine.fixed_columns::<3>(1) * p;
        for (s, w) in self.source.iter().zip(&self.weights) {
            out += (p - s).norm() * w;
        }
        out
    }

    /// Bending weights; all zero for an affine correspondence.
    pub fn weights(&self) -> &[Vec3] {
        &self.weights
    }
}

/// Warps `query` by the spline taking `source` landmarks to `target`.
pub fn tps_warp(source: &[Vec3], target: &[Vec3], query: &[Vec3]) -> Result<Vec<Vec3>> {
    let tps = ThinPlateSpline::fit(source, target)?;
    Ok(query.iter().map(|q| tps.apply(q)).collect())
}
