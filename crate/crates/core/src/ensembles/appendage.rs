use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::Unit;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_rng, Ensemble, GroundTruth, SampleTruth, ShapeSample};
use crate::geometry::{RigidTransform, TriangleMesh, Vec3};
use crate::{Error, Result};

/// Number of points on every ground-truth ostium ring.
pub const OSTIUM_POINTS: usize = 64;

/// Template family: pouch length (mm) and profile shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AppendageFamily {
    pub name: &'static str,
    pub length: f64,
    /// Sideways lean of the pouch, |bend| < 1.
    pub bend: f64,
    /// Amplitude of the lobes, |lobulation| < 1.
    pub lobulation: f64,
    pub lobes: u32,
}

pub const FAMILIES: [AppendageFamily; 4] = [
    AppendageFamily { name: "cauliflower", length: 4.0, bend: 0.0, lobulation: 0.6, lobes: 3 },
    AppendageFamily { name: "chicken-wing", length: 10.0, bend: 0.7, lobulation: 0.0, lobes: 0 },
    AppendageFamily { name: "wind-sock", length: 14.0, bend: 0.0, lobulation: 0.0, lobes: 0 },
    AppendageFamily { name: "cactus", length: 8.0, bend: -0.6, lobulation: 0.3, lobes: 2 },
];

/// Ensemble-level generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppendageParams {
    /// Range of both ostium semi-axes (mm).
    pub ostium_range: (f64, f64),
    /// Nominal body semi-axes along y and z (mm); the x semi-axis follows
    /// from the ostium.
    pub body: (f64, f64),
    /// Relative jitter of body size.
    pub body_jitter: f64,
    /// Ostium plane tilt about x (degrees).
    pub tilt_range: (f64, f64),
    /// Within-family jitter: relative on length, absolute on bend and
    /// lobulation.
    pub family_jitter: f64,
    /// Random pose: maximum rotation (degrees) and shift per axis (mm).
    pub pose_angle: f64,
    pub pose_shift: f64,
    pub lobe_rings: usize,
    pub body_rings: usize,
}

impl Default for AppendageParams {
    fn default() -> Self {
        Self {
            ostium_range: (5.25, 6.25),
            body: (10.0, 9.0),
            body_jitter: 0.03,
            tilt_range: (12.0, 24.0),
            family_jitter: 0.05,
            pose_angle: 5.0,
            pose_shift: 1.0,
            lobe_rings: 12,
            body_rings: 24,
        }
    }
}

/// Generative parameters of one appendage, in its body frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendageShape {
    pub length: f64,
    pub bend: f64,
    pub lobulation: f64,
    pub lobes: u32,
    /// Ostium semi-axes (mm) along x and within the tilted plane.
    pub ostium_a: f64,
    pub ostium_b: f64,
    pub body_b: f64,
    pub body_c: f64,
    pub tilt_deg: f64,
}

impl AppendageShape {
    pub fn from_family(family: &AppendageFamily, ostium: f64, body: (f64, f64), tilt_deg: f64) -> Self {
        Self {
            length: family.length,
            bend: family.bend,
            lobulation: family.lobulation,
            lobes: family.lobes,
            ostium_a: ostium,
            ostium_b: ostium,
            body_b: body.0,
            body_c: body.1,
            tilt_deg,
        }
    }

    /// Normal of the ostium plane in the body frame.
    pub fn ostium_normal(&self) -> Vec3 {
        let (s, c) = self.tilt_deg.to_radians().sin_cos();
        Vec3::new(0.0, -s, c)
    }
}

/// Ostium plane geometry for an ellipsoidal body `xᵀDx = 1` cut by a plane.
struct Cut {
    semi_axes: Vec3,
    center: Vec3,
    e1: Vec3,
    e2: Vec3,
}

fn cut(shape: &AppendageShape) -> Result<Cut> {
    let (a, b) = (shape.ostium_a, shape.ostium_b);
    let (bb, cc) = (shape.body_b, shape.body_c);
    if !(a > 0.0 && b > 0.0 && bb > 0.0 && cc > 0.0 && shape.length >= 0.0) {
        return Err(Error::InvalidParameter("appendage dimensions must be positive".into()));
    }
    if !(shape.bend.abs() < 1.0 && shape.lobulation.abs() < 1.0) {
        return Err(Error::InvalidParameter("bend and lobulation must lie in (-1, 1)".into()));
    }
    if !(0.0..80.0).contains(&shape.tilt_deg) {
        return Err(Error::InvalidParameter(format!("tilt {}° outside [0, 80)", shape.tilt_deg)));
    }
    let (s, c) = shape.tilt_deg.to_radians().sin_cos();
    let e1 = Vec3::x();
    let e2 = Vec3::new(0.0, c, s);
    let w = Vec3::new(0.0, -s, c);
    let alpha = c * c / (bb * bb) + s * s / (cc * cc);
    let gamma = s * c * (1.0 / (cc * cc) - 1.0 / (bb * bb));
    let delta = s * s / (bb * bb) + c * c / (cc * cc);
    // in-plane ellipse: u²/A² + α (t - t0)² = K
    let k = alpha * b * b;
    if k >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "ostium semi-axis {b} mm does not fit the body (limit {:.3} mm)",
            1.0 / alpha.sqrt()
        )));
    }
    let h = ((1.0 - k) / (delta - gamma * gamma / alpha)).sqrt();
    let t0 = -h * gamma / alpha;
    let semi_axes = Vec3::new(a / k.sqrt(), bb, cc);
    Ok(Cut { semi_axes, center: h * w + t0 * e2, e1, e2 })
}

/// Closed surface of one appendage and its ostium ring, in the body frame.
/// The body is an ellipsoid centred at the origin; the pouch replaces the
/// cap cut off by the ostium plane and is a radial graph over the ostium
/// disk, so the whole surface is star-shaped about the origin.
pub fn appendage_shape(shape: &AppendageShape, lobe_rings: usize, body_rings: usize) -> Result<(TriangleMesh, Vec<Vec3>)> {
    let cut = cut(shape)?;
    if lobe_rings < 2 || body_rings < 2 {
        return Err(Error::InvalidParameter("need at least 2 lobe and body rings".into()));
    }
    let t = OSTIUM_POINTS;
    let lobe_point = |rho: f64, tau: f64| {
        let q = cut.center + rho * (shape.ostium_a * tau.cos() * cut.e1 + shape.ostium_b * tau.sin() * cut.e2);
        let f = (1.0 - rho * rho)
            * (1.0 + shape.bend * rho * tau.cos())
            * (1.0 + shape.lobulation * rho * rho * (shape.lobes as f64 * tau).cos());
        q * (1.0 + shape.length * f / q.norm())
    };
    let d = Vec3::new(1.0, 1.0, 1.0).component_div(&cut.semi_axes.component_mul(&cut.semi_axes));
    let on_body = |dir: &Vec3| dir / dir.component_mul(dir).dot(&d).sqrt();

    let mut rows: Vec<Vec<Vec3>> = Vec::new();
    for j in 1..lobe_rings {
        let rho = j as f64 / lobe_rings as f64;
        rows.push((0..t).map(|i| lobe_point(rho, TAU * i as f64 / t as f64)).collect());
    }
    let rim: Vec<Vec3> = (0..t).map(|i| lobe_point(1.0, TAU * i as f64 / t as f64)).collect();
    rows.push(rim.clone());
    let pole = -cut.center.normalize();
    for j in 1..body_rings {
        let s = j as f64 / body_rings as f64;
        rows.push(
            rim.iter()
                .map(|r| {
                    let start = Unit::new_normalize(*r);
                    let dir = start.slerp(&Unit::new_unchecked(pole), s);
                    on_body(&dir)
                })
                .collect(),
        );
    }
    let tip = lobe_point(0.0, 0.0);
    let bottom = on_body(&pole);

    let mut vertices = vec![tip];
    rows.iter().for_each(|r| vertices.extend_from_slice(r));
    vertices.push(bottom);
    let last = vertices.len() - 1;
    let at = |row: usize, i: usize| 1 + row * t + i % t;
    let mut faces = Vec::new();
    for i in 0..t {
        faces.push([0, at(0, i), at(0, i + 1)]);
    }
    for row in 0..rows.len() - 1 {
        for i in 0..t {
            faces.push([at(row, i), at(row + 1, i), at(row + 1, i + 1)]);
            faces.push([at(row, i), at(row + 1, i + 1), at(row, i + 1)]);
        }
    }
    let low = rows.len() - 1;
    for i in 0..t {
        faces.push([last, at(low, i + 1), at(low, i)]);
    }
    let mut mesh = TriangleMesh::new(vertices, faces)?;
    if mesh.volume() < 0.0 {
        mesh = mesh.flipped();
    }
    mesh.check_watertight()?;
    Ok((mesh, rim))
}

/// `n` appendages; sample `i` belongs to family `i mod 4` (labels 1..4).
/// Each sample gets a small random rigid pose, applied to its ground truth
/// as well. The septum surrogate is the body's equatorial plane.
pub fn gen_appendage(n: usize, seed: u64, params: &AppendageParams) -> Result<(Ensemble, GroundTruth)> {
    if n < 2 {
        return Err(Error::InvalidParameter("an ensemble needs at least 2 samples".into()));
    }
    let (olo, ohi) = params.ostium_range;
    let (tlo, thi) = params.tilt_range;
    if !(0.0 < olo && olo <= ohi && tlo <= thi) || params.body_jitter < 0.0 || params.family_jitter < 0.0 {
        return Err(Error::InvalidParameter("invalid appendage parameter ranges".into()));
    }
    let uniform = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let mut samples = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(seed, i);
        let label = i % FAMILIES.len();
        let fam = &FAMILIES[label];
        let fj = params.family_jitter;
        let bj = params.body_jitter;
        let shape = AppendageShape {
            length: fam.length * (1.0 + uniform(&mut rng, -fj, fj)),
            bend: fam.bend + uniform(&mut rng, -fj, fj),
            lobulation: fam.lobulation + if fam.lobes > 0 { uniform(&mut rng, -fj, fj) } else { 0.0 },
            lobes: fam.lobes,
            ostium_a: uniform(&mut rng, olo, ohi),
            ostium_b: uniform(&mut rng, olo, ohi),
            body_b: params.body.0 * (1.0 + uniform(&mut rng, -bj, bj)),
            body_c: params.body.1 * (1.0 + uniform(&mut rng, -bj, bj)),
            tilt_deg: uniform(&mut rng, tlo, thi),
        };
        let (mesh, ring) = appendage_shape(&shape, params.lobe_rings, params.body_rings)?;
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let angle = uniform(&mut rng, -params.pose_angle, params.pose_angle).to_radians();
        let shift = params.pose_shift;
        let offset = Vec3::from_fn(|_, _| uniform(&mut rng, -shift, shift));
        let pose = if axis.norm() > 1e-9 {
            RigidTransform::from_axis_angle(axis, angle, offset)
        } else {
            RigidTransform::translation(offset)
        };

        let id = format!("appendage_{i:03}");
        let mut p = BTreeMap::new();
        p.insert("length".to_string(), shape.length);
        p.insert("bend".to_string(), shape.bend);
        p.insert("lobulation".to_string(), shape.lobulation);
        p.insert("lobes".to_string(), shape.lobes as f64);
        p.insert("ostium_a".to_string(), shape.ostium_a);
        p.insert("ostium_b".to_string(), shape.ostium_b);
        p.insert("body_b".to_string(), shape.body_b);
        p.insert("body_c".to_string(), shape.body_c);
        p.insert("tilt_deg".to_string(), shape.tilt_deg);
        let local = SampleTruth {
            id: id.clone(),
            params: p,
            family: Some(label + 1),
            ostium: Some(ring),
            ostium_normal: Some(shape.ostium_normal()),
            septum_normal: Some(Vec3::z()),
        };
        truth.push(local.transformed(&pose));
        samples.push(ShapeSample { id, mesh: mesh.transformed(&pose), sdf: None });
    }
    let provenance = serde_json::json!({
        "generator": "appendage",
        "n": n,
        "seed": seed,
        "params": params,
        "families": FAMILIES,
    });
    Ok((
        Ensemble { samples, world_frame: false, provenance },
        GroundTruth { generator: "appendage".into(), samples: truth },
    ))
}
