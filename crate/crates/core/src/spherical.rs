//! Pairwise spherical-harmonic correspondence: each surface is mapped to the
//! unit sphere, its parameterization rotated onto the first-order ellipsoid
//! axes, expanded in spherical harmonics and resampled on a subdivided
//! icosahedron. Shapes never see each other.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensembles::Ensemble;
use crate::geometry::{icosphere_directions, TriangleMesh, Vec3};
use crate::shapestats::CorrespondenceModel;
use crate::{Error, Result};

const MAX_CONDITION: f64 = 1e12;
/// Adjacent ellipsoid axes closer than this ratio cannot be told apart.
pub const AMBIGUITY_RATIO: f64 = 1.05;

/// Per-vertex spherical coordinates of a surface.
#[derive(Clone, Debug)]
pub struct SphericalParam {
    theta: Vec<f64>,
    phi: Vec<f64>,
    /// Spherical triangles tile the sphere exactly once.
    pub bijective: bool,
    /// Summed solid angle of the mapped faces (4π when bijective).
    pub spherical_area: f64,
    /// Max over faces of normalized mapped area / normalized surface area.
    pub area_distortion: f64,
    /// Center of the radial projection.
    pub center: Vec3,
    /// Rotation applied to the parameter sphere; identity before alignment.
    pub rotation: Matrix3<f64>,
    /// First-order ellipsoid semi-axes, largest first, once aligned.
    pub axis_lengths: Option<[f64; 3]>,
    pub ambiguous: bool,
}

impl SphericalParam {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Unit vector of vertex `i` on the parameter sphere.
    pub fn direction(&self, i: usize) -> Vec3 {
        direction(self.theta[i], self.phi[i])
    }
}

pub fn direction(theta: f64, phi: f64) -> Vec3 {
    let s = theta.sin();
    Vec3::new(s * phi.cos(), s * phi.sin(), theta.cos())
}

/// (θ, φ) of a nonzero vector, φ in [0, 2π).
pub fn angles(v: &Vec3) -> (f64, f64) {
    let u = v.normalize();
    let theta = u.z.clamp(-1.0, 1.0).acos();
    let mut phi = u.y.atan2(u.x);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi = 0.0;
    }
    (theta, phi)
}

/// Signed solid angle of the triangle spanned by three directions.
fn solid_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(c));
    let den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
    2.0 * num.atan2(den)
}

/// Radial projection about the solid centroid.
pub fn spherical_parameterize(mesh: &TriangleMesh) -> Result<SphericalParam> {
    mesh.check_watertight()?;
    let chi = mesh.euler_characteristic();
    if chi != 2 {
        return Err(Error::InvalidMesh(format!("expected a genus-0 surface, Euler characteristic is {chi}")));
    }
    let center = mesh.centroid();
    let rel: Vec<Vec3> = mesh.vertices().iter().map(|v| v - center).collect();
    if rel.iter().any(|r| r.norm() < 1e-12) {
        return Err(Error::NotStarShaped("a vertex coincides with the centroid".into()));
    }
    let total_area = mesh.area();
    let mut spherical_area = 0.0;
    let mut chordal = Vec::with_capacity(mesh.num_faces());
    for (f, &[a, b, c]) in mesh.faces().iter().enumerate() {
        let omega = solid_angle(&rel[a], &rel[b], &rel[c]);
        if !(omega > 0.0) && mesh.face_area(f) > 1e-14 * total_area {
            return Err(Error::NotStarShaped(format!("face {f} is seen from behind")));
        }
        spherical_area += omega;
        let (ua, ub, uc) = (rel[a].normalize(), rel[b].normalize(), rel[c].normalize());
        chordal.push(0.5 * (ub - ua).cross(&(uc - ua)).norm());
    }
    let bijective = (spherical_area - 4.0 * PI).abs() <= 0.01 * 4.0 * PI;
    if !bijective {
        return Err(Error::NotStarShaped(format!(
            "mapped faces cover {:.4}·4π of the sphere",
            spherical_area / (4.0 * PI)
        )));
    }
    let chordal_total: f64 = chordal.iter().sum();
    let area_distortion = chordal
        .iter()
        .enumerate()
        .filter(|(f, _)| mesh.face_area(*f) > 0.0)
        .map(|(f, s)| (s / chordal_total) / (mesh.face_area(f) / total_area))
        .fold(0.0, f64::max);
    let (theta, phi) = rel.iter().map(angles).unzip();
    Ok(SphericalParam {
        theta,
        phi,
        bijective,
        spherical_area,
        area_distortion,
        center,
        rotation: Matrix3::identity(),
        axis_lengths: None,
        ambiguous: false,
    })
}

/// Rotates the parameter sphere so the first-order ellipsoid's longest axis
/// sits at the pole (z) and the middle one on y. Axis signs follow the
/// world axes they are mapped to; x completes a right-handed frame.
pub fn ellipsoid_align(param: &SphericalParam, mesh: &TriangleMesh) -> Result<SphericalParam> {
    let coeffs = fit_spharm(mesh, param, 1)?;
    // x(u) = c0 + A u on the unit sphere; column j of A pairs with u_j.
    let k = (3.0 / (4.0 * PI)).sqrt();
    let mut a = Matrix3::zeros();
    // real l = 1 basis is k·(y, z, x) for m = -1, 0, 1
    for (col, idx) in [(0, 3), (1, 1), (2, 2)] {
        a.set_column(col, &(k * coeffs.real[idx]));
    }
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = order.map(|i| svd.singular_values[i]);
    let axis = |i: usize, target: usize| -> Vec3 {
        let world = u.column(order[i]).into_owned();
        let param = vt.row(order[i]).transpose();
        if world[target] < 0.0 {
            -param
        } else {
            param
        }
    };
    let vz = axis(0, 2);
    let vy = axis(1, 1);
    let vx = vy.cross(&vz);
    let rot = Matrix3::from_rows(&[vx.transpose(), vy.transpose(), vz.transpose()]);
    let ambiguous = sv[0] < AMBIGUITY_RATIO * sv[1] || sv[1] < AMBIGUITY_RATIO * sv[2];
    if ambiguous {
        log::warn!("first-order ellipsoid axes {sv:?} are too similar to order reliably");
    }
    let (theta, phi) = (0..param.len()).map(|i| angles(&(rot * param.direction(i)))).unzip();
    Ok(SphericalParam {
        theta,
        phi,
        rotation: rot * param.rotation,
        axis_lengths: Some(sv),
        ambiguous,
        ..param.clone()
    })
}

/// Normalized associated Legendre values with the Condon–Shortley phase,
/// `sqrt((2l+1)/4π · (l-m)!/(l+m)!) P_l^m(x)`, indexed `l(l+1)/2 + m`.
fn legendre_table(l_max: usize, x: f64) -> Vec<f64> {
    let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let mut p = vec![0.0; idx(l_max, l_max) + 1];
    let s = (1.0 - x * x).max(0.0).sqrt();
    p[0] = (0.25 / PI).sqrt();
    for m in 1..=l_max {
        p[idx(m, m)] = -s * ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * p[idx(m - 1, m - 1)];
    }
    for m in 0..l_max {
        p[idx(m + 1, m)] = x * ((2 * m + 3) as f64).sqrt() * p[idx(m, m)];
    }
    for m in 0..=l_max {
        for l in m + 2..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[idx(l, m)] = a * (x * p[idx(l - 1, m)] - b * p[idx(l - 2, m)]);
        }
    }
    p
}

/// Complex spherical harmonic `Y_l^m(θ, φ)`. Negative orders use
/// `Y_l^{-m} = (-1)^m conj(Y_l^m)`; `|m| > l` gives zero.
pub fn evaluate_ylm(l: usize, m: i64, theta: f64, phi: f64) -> Complex64 {
    let am = m.unsigned_abs() as usize;
    if am > l {
        return Complex64::new(0.0, 0.0);
    }
    let p = legendre_table(l, theta.cos())[l * (l + 1) / 2 + am];
    let y = Complex64::from_polar(p, am as f64 * phi);
    if m < 0 {
        if am % 2 == 1 {
            -y.conj()
        } else {
            y.conj()
        }
    } else {
        y
    }
}

/// Index of real harmonic (l, m) in a basis vector.
fn basis_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Real orthonormal harmonics up to `l_max` at one direction, ordered by
/// `l² + l + m`.
fn real_basis(l_max: usize, theta: f64, phi: f64) -> Vec<f64> {
    let p = legendre_table(l_max, theta.cos());
    let mut out = vec![0.0; (l_max + 1) * (l_max + 1)];
    for l in 0..=l_max {
        let row = l * (l + 1) / 2;
        out[l * l + l] = p[row];
        for m in 1..=l {
            let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
            let scale = std::f64::consts::SQRT_2 * sign * p[row + m];
            let (s, c) = (m as f64 * phi).sin_cos();
            out[l * l + l + m] = scale * c;
            out[l * l + l - m] = scale * s;
        }
    }
    out
}

/// Spherical-harmonic expansion of the three coordinate functions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpharmCoeffs {
    pub l_max: usize,
    /// Real-basis coefficients, one xyz triple per `l² + l + m`.
    pub real: Vec<Vec3>,
    /// RMS distance between fitted and input vertices (mm).
    pub residual_rms: f64,
}

impl SpharmCoeffs {
    /// Complex coefficients `c_l^m` of x, y, z for `|m| ≤ l`.
    pub fn coefficient(&self, l: usize, m: i64) -> [Complex64; 3] {
        let am = m.unsigned_abs() as usize;
        assert!(l <= self.l_max && am <= l, "coefficient ({l}, {m}) out of range");
        let at = |mm: i64| self.real[basis_index(l, mm)];
        if m == 0 {
            let a = at(0);
            return [0, 1, 2].map(|c| Complex64::new(a[c], 0.0));
        }
        let (pos, neg) = (at(am as i64), at(-(am as i64)));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        [0, 1, 2].map(|c| {
            if m > 0 {
                let sign = if am % 2 == 1 { -1.0 } else { 1.0 };
                Complex64::new(sign * r * pos[c], -sign * r * neg[c])
            } else {
                Complex64::new(r * pos[c], r * neg[c])
            }
        })
    }

    /// Reconstructed surface point at parameter (θ, φ).
    pub fn evaluate(&self, theta: f64, phi: f64) -> Vec3 {
        real_basis(self.l_max, theta, phi)
            .iter()
            .zip(&self.real)
            .map(|(b, c)| *b * c)
            .sum()
    }
}

/// Least-squares fit of the vertex coordinates on harmonics up to `l_max`.
pub fn fit_spharm(mesh: &TriangleMesh, param: &SphericalParam, l_max: usize) -> Result<SpharmCoeffs> {
    let n = mesh.vertices().len();
    if param.len() != n {
        return Err(Error::InvalidParameter(format!("parameterization has {} vertices, mesh has {n}", param.len())));
    }
    if !param.bijective {
        return Err(Error::InvalidParameter("parameterization is not bijective".into()));
    }
    let k = (l_max + 1) * (l_max + 1);
    let mut basis = DMatrix::zeros(n, k);
    for i in 0..n {
        for (j, v) in real_basis(l_max, param.theta[i], param.phi[i]).into_iter().enumerate() {
            basis[(i, j)] = v;
        }
    }
    let normal = basis.tr_mul(&basis);
    let eig = SymmetricEigen::new(normal.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Singular("harmonic normal equations".into()))?;
    let targets = DMatrix::from_fn(n, 3, |i, c| mesh.vertices()[i][c]);
    let sol = chol.solve(&basis.tr_mul(&targets));
    let fitted = &basis * &sol;
    let residual_rms = ((fitted - &targets).norm_squared() / n as f64).sqrt();
    let real = (0..k).map(|j| Vec3::new(sol[(j, 0)], sol[(j, 1)], sol[(j, 2)])).collect();
    Ok(SpharmCoeffs { l_max, real, residual_rms })
}

/// Reconstruction at the `10·4^level + 2` icosphere vertices.
pub fn sample_icosahedron(coeffs: &SpharmCoeffs, level: u32) -> Vec<Vec3> {
    icosphere_directions(level)
        .0
        .iter()
        .map(|d| {
            let (t, p) = angles(d);
            coeffs.evaluate(t, p)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpharmConfig {
    pub l_max: usize,
    pub level: u32,
}

impl Default for SpharmConfig {
    fn default() -> Self {
        Self { l_max: 12, level: 3 }
    }
}

/// Per-shape diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpharmReport {
    pub id: String,
    pub area_distortion: f64,
    pub residual_rms: f64,
    pub axis_lengths: [f64; 3],
    pub ambiguous: bool,
}

#[derive(Clone, Debug)]
pub struct SpharmResult {
    pub model: CorrespondenceModel,
    pub reports: Vec<SpharmReport>,
}

impl SpharmResult {
    pub fn ambiguous_ids(&self) -> Vec<&str> {
        self.reports.iter().filter(|r| r.ambiguous).map(|r| r.id.as_str()).collect()
    }
}

/// Parameterize, align, fit and resample every shape independently.
pub fn correspond_spherical(ensemble: &Ensemble, config: &SpharmConfig) -> Result<SpharmResult> {
    if ensemble.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let mut rows = Vec::with_capacity(ensemble.len());
    let mut reports = Vec::with_capacity(ensemble.len());
    for s in &ensemble.samples {
        let tag = |e: Error| match e {
            Error::NotStarShaped(m) => Error::NotStarShaped(format!("{}: {m}", s.id)),
            Error::InvalidMesh(m) => Error::InvalidMesh(format!("{}: {m}", s.id)),
            other => other,
        };
        let param = spherical_parameterize(&s.mesh).map_err(tag)?;
        let aligned = ellipsoid_align(&param, &s.mesh)?;
        let coeffs = fit_spharm(&s.mesh, &aligned, config.l_max)?;
        rows.push(sample_icosahedron(&coeffs, config.level));
        reports.push(SpharmReport {
            id: s.id.clone(),
            area_distortion: aligned.area_distortion,
            residual_rms: coeffs.residual_rms,
            axis_lengths: aligned.axis_lengths.unwrap_or([0.0; 3]),
            ambiguous: aligned.ambiguous,
        });
    }
    let model = CorrespondenceModel::new("spherical", ensemble.ids(), rows)?;
    Ok(SpharmResult { model, reports })
}
