use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3};

use crate::geometry::Vec3;
use crate::{Error, Result};

/// Ordered ring of 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub points: Vec<Vec3>,
    pub closed: bool,
}

impl Contour {
    pub fn closed(points: Vec<Vec3>) -> Self {
        Self { points, closed: true }
    }
}

/// Ellipse fitted to a planar ring, with the derived measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipseFit {
    pub center: Vec3,
    /// Unit normal of the best-fit plane.
    pub normal: Vec3,
    pub major_axis: Vec3,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub max_diameter: f64,
    pub min_diameter: f64,
    pub area: f64,
    pub circumference: f64,
    /// RMS of first-order geometric distances of the ring to the ellipse
    /// within the plane (mm).
    pub residual_rms: f64,
    /// RMS out-of-plane distance (mm).
    pub plane_rms: f64,
}

/// Ramanujan's second approximation of an ellipse's perimeter.
pub fn ramanujan_circumference(a: f64, b: f64) -> f64 {
    let h = ((a - b) / (a + b)).powi(2);
    PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
}

/// Best-fit plane by PCA, then a direct least-squares ellipse fit
/// (Fitzgibbon's constraint, Halíř–Flusser partitioning) in that plane.
pub fn fit_ellipse(contour: &Contour) -> Result<EllipseFit> {
    let pts = &contour.points;
    if pts.len() < 5 {
        return Err(Error::InvalidParameter(format!("ellipse fit needs at least 5 points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let centroid = pts.iter().sum::<Vec3>() / n;
    let mut scatter = Matrix3::zeros();
    for p in pts {
        scatter += (p - centroid) * (p - centroid).transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 1e-12 * l0) {
        return Err(Error::Degenerate("contour points are collinear".into()));
    }
    let e1: Vec3 = eig.eigenvectors.column(order[0]).into();
    let e2: Vec3 = eig.eigenvectors.column(order[1]).into();
    let normal = e1.cross(&e2).normalize();
    let plane_rms = (eig.eigenvalues[order[2]].max(0.0) / n).sqrt();

    let scale = ((l0 + l1) / n).sqrt();
    let uv: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| ((p - centroid).dot(&e1) / scale, (p - centroid).dot(&e2) / scale))
        .collect();
    let conic = direct_fit(&uv)?;
    let [a, b, c, d, e, f] = conic;
    let am = Matrix2::new(a, b / 2.0, b / 2.0, c);
    let g = nalgebra::Vector2::new(d, e);
    let inv = am
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("conic has no centre".into()))?;
    let x0 = -0.5 * inv * g;
    let f0 = f + 0.5 * g.dot(&x0);
    let ae = SymmetricEigen::new(am);
    let (mut ia, mut ib) = (0, 1);
    let r0 = -f0 / ae.eigenvalues[0];
    let r1 = -f0 / ae.eigenvalues[1];
    if !(r0 > 0.0 && r1 > 0.0) {
        return Err(Error::Degenerate("fitted conic is not an ellipse".into()));
    }
    let (mut ra, mut rb) = (r0.sqrt(), r1.sqrt());
    if rb > ra {
        std::mem::swap(&mut ra, &mut rb);
        std::mem::swap(&mut ia, &mut ib);
    }
    let _ = ib;
    let major2 = ae.eigenvectors.column(ia);
    let semi_major = ra * scale;
    let semi_minor = rb * scale;
    let residual_rms = {
        let sum: f64 = uv
            .iter()
            .map(|&(x, y)| {
                let v = a * x * x + b * x * y + c * y * y + d * x + e * y + f;
                let gx = 2.0 * a * x + b * y + d;
                let gy = b * x + 2.0 * c * y + e;
                let gn = (gx * gx + gy * gy).sqrt();
                if gn > 0.0 {
                    (v / gn).powi(2)
                } else {
                    0.0
                }
            })
            .sum();
        (sum / n).sqrt() * scale
    };
    Ok(EllipseFit {
        center: centroid + scale * (x0[0] * e1 + x0[1] * e2),
        normal,
        major_axis: (major2[0] * e1 + major2[1] * e2).normalize(),
        semi_major,
        semi_minor,
        max_diameter: 2.0 * semi_major,
        min_diameter: 2.0 * semi_minor,
        area: PI * semi_major * semi_minor,
        circumference: ramanujan_circumference(semi_major, semi_minor),
        residual_rms,
        plane_rms,
    })
}

/// Conic `[a b c d e f]` with `4ac − b² > 0` minimizing the algebraic error.
fn direct_fit(uv: &[(f64, f64)]) -> Result<[f64; 6]> {
    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for &(x, y) in uv {
        let q = Vector3::new(x * x, x * y, y * y);
        let l = Vector3::new(x, y, 1.0);
        s1 += q * q.transpose();
        s2 += q * l.transpose();
        s3 += l * l.transpose();
    }
    let s3inv = s3
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("contour has too little spread for an ellipse fit".into()))?;
    let t = -s3inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let mm = Matrix3::from_rows(&[m.row(2) / 2.0, -m.row(1), m.row(0) / 2.0]);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in real_eigenvalues(&mm) {
        let svd = (mm - Matrix3::identity() * lambda).svd(false, true);
        let vt = svd.v_t.unwrap();
        let imin = svd.singular_values.imin();
        let v: Vector3<f64> = vt.row(imin).transpose();
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.as_ref().map_or(true, |(c, _)| cond > *c) {
            best = Some((cond, v));
        }
    }
    let (_, a1) = best.ok_or_else(|| Error::Degenerate("no elliptical solution".into()))?;
    let a2 = t * a1;
    Ok([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]])
}

/// Real roots of the characteristic polynomial of a 3 × 3 matrix.
fn real_eigenvalues(m: &Matrix3<f64>) -> Vec<f64> {
    match m.eigenvalues() {
        Some(v) => v.iter().copied().collect(),
        None => {
            let c = m.complex_eigenvalues();
            c.iter().filter(|z| z.im.abs() <= 1e-9 * (1.0 + z.re.abs())).map(|z| z.re).collect()
        }
    }
}

/// Angle between two planes given by their normals, in degrees within
/// [0, 90].
pub fn plane_angle(n1: &Vec3, n2: &Vec3) -> Result<f64> {
    let (a, b) = (n1.norm(), n2.norm());
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidParameter("plane normal has zero length".into()));
    }
    let c = (n1.dot(n2) / (a * b)).abs().min(1.0);
    Ok(c.acos().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    fn ring(a: f64, b: f64, n: usize, phase: f64) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let t = phase + 2.0 * PI * i as f64 / n as f64;
                Vec3::new(a * t.cos(), b * t.sin(), 0.0)
            })
            .collect()
    }

    /// Perimeter by the trapezoid rule, which converges geometrically for
    /// smooth periodic integrands.
    fn perimeter_quadrature(a: f64, b: f64) -> f64 {
        let n = 20000;
        let h = 2.0 * PI / n as f64;
        (0..n)
            .map(|i| {
                let t = i as f64 * h;
                (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt()
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn circle_measurements() {
        let f = fit_ellipse(&Contour::closed(ring(5.0, 5.0, 64, 0.1))).unwrap();
        assert!((f.max_diameter - 10.0).abs() < 1e-6);
        assert!((f.min_diameter - 10.0).abs() < 1e-6);
        assert!((f.area - 25.0 * PI).abs() < 1e-6);
        assert!((f.circumference - 10.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn ellipse_measurements_against_quadrature() {
        let f = fit_ellipse(&Contour::closed(ring(2.0, 1.0, 64, 0.3))).unwrap();
        assert!((f.semi_major - 2.0).abs() < 1e-6 && (f.semi_minor - 1.0).abs() < 1e-6);
        assert!((f.area - 2.0 * PI).abs() < 1e-6);
        let exact = perimeter_quadrature(2.0, 1.0);
        assert!((exact - 9.688448).abs() < 1e-5);
        assert!((f.circumference - exact).abs() < 1e-3);
        for ratio in [1.0, 1.5, 3.0, 5.0] {
            assert!((ramanujan_circumference(ratio, 1.0) - perimeter_quadrature(ratio, 1.0)).abs() < 1e-4 * ratio);
        }
    }

    #[test]
    fn rigid_motion_and_ordering_invariance() {
        let base = ring(3.0, 1.7, 64, 0.0);
        let f0 = fit_ellipse(&Contour::closed(base.clone())).unwrap();
        let xf = RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, -0.5), 1.3, Vec3::new(10.0, -4.0, 7.0));
        let moved: Vec<Vec3> = base.iter().map(|p| xf.apply(p)).collect();
        let mut rolled = base.clone();
        rolled.rotate_left(17);
        rolled.reverse();
        for pts in [moved, rolled] {
            let f = fit_ellipse(&Contour::closed(pts)).unwrap();
            assert!((f.max_diameter - f0.max_diameter).abs() < 1e-9);
            assert!((f.min_diameter - f0.min_diameter).abs() < 1e-9);
            assert!((f.area - f0.area).abs() < 1e-9);
            assert!((f.circumference - f0.circumference).abs() < 1e-9);
        }
        assert!(f0.area <= PI * f0.max_diameter / 2.0 * f0.min_diameter / 2.0 * (1.0 + 1e-9));
    }

    #[test]
    fn collinear_ring_rejected() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(fit_ellipse(&Contour::closed(pts)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn plane_angles() {
        assert_eq!(plane_angle(&Vec3::z(), &(-2.0 * Vec3::z())).unwrap(), 0.0);
        assert!((plane_angle(&Vec3::x(), &Vec3::y()).unwrap() - 90.0).abs() < 1e-12);
        let d = plane_angle(&Vec3::x(), &(Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt())).unwrap();
        assert!((d - 45.0).abs() < 1e-9);
        assert!(plane_angle(&Vec3::zeros(), &Vec3::x()).is_err());
    }
}
