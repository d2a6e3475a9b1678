use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_rng, Ensemble, GroundTruth, SampleTruth, ShapeSample};
use crate::geometry::{TriangleMesh, Vec3};
use crate::{Error, Result};

/// Box with a hemispherical bump on its top face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxBumpParams {
    /// Edge length of the cube, centred at the origin.
    pub box_size: f64,
    pub bump_radius: f64,
    /// Fractions of the top face along x between which bump centres are
    /// drawn uniformly.
    pub bump_range: (f64, f64),
    /// Surface grid spacing.
    pub resolution: f64,
}

impl Default for BoxBumpParams {
    fn default() -> Self {
        Self {
            box_size: 4.0,
            bump_radius: 0.6,
            bump_range: (0.4, 0.6),
            resolution: 0.1,
        }
    }
}

impl BoxBumpParams {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bump_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidParameter(format!("bump_range {:?} must lie in (0, 1)", self.bump_range)));
        }
        if !(self.box_size > 0.0 && self.bump_radius > 0.0 && self.resolution > 0.0) {
            return Err(Error::InvalidParameter("box size, bump radius and resolution must be positive".into()));
        }
        if 2.0 * self.bump_radius >= self.box_size {
            return Err(Error::InvalidParameter(format!(
                "bump radius {} exceeds the box extent {}",
                self.bump_radius, self.box_size
            )));
        }
        Ok(())
    }

    /// Bump centre x for a fraction along the top face.
    pub fn bump_x(&self, fraction: f64) -> f64 {
        -0.5 * self.box_size + fraction * self.box_size
    }
}

/// Box surface on a regular grid; the bump displaces top-face vertices
/// upward by the hemisphere height. Connectivity is the same for every
/// bump position.
pub fn box_bump_mesh(params: &BoxBumpParams, fraction: f64) -> Result<TriangleMesh> {
    params.validate()?;
    let n = (params.box_size / params.resolution).round().max(1.0) as usize;
    let half = 0.5 * params.box_size;
    let h = params.box_size / n as f64;
    let cx = params.bump_x(fraction);
    let r = params.bump_radius;

    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut vid = |g: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(g).or_insert_with(|| {
            let mut p = Vec3::new(-half + h * g[0] as f64, -half + h * g[1] as f64, -half + h * g[2] as f64);
            if g[2] == n {
                let d2 = (p.x - cx).powi(2) + p.y * p.y;
                if d2 < r * r {
                    p.z += (r * r - d2).sqrt();
                }
            }
            vertices.push(p);
            vertices.len() - 1
        })
    };
    let mut faces = Vec::new();
    // each face: fixed axis, side (0 or n), two in-plane axes ordered so
    // that (u, v, outward) is right-handed
    let sides: [(usize, usize, usize, usize); 6] = [
        (2, n, 0, 1),
        (2, 0, 1, 0),
        (0, n, 1, 2),
        (0, 0, 2, 1),
        (1, n, 2, 0),
        (1, 0, 0, 2),
    ];
    for &(axis, side, u, v) in &sides {
        for i in 0..n {
            for j in 0..n {
                let grid = |a: usize, b: usize| {
                    let mut g = [0usize; 3];
                    g[axis] = side;
                    g[u] = a;
                    g[v] = b;
                    g
                };
                let q = [grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1)].map(|g| vid(g, &mut vertices));
                faces.push([q[0], q[1], q[2]]);
                faces.push([q[0], q[2], q[3]]);
            }
        }
    }
    let mesh = TriangleMesh::new(vertices, faces)?;
    mesh.check_watertight()?;
    Ok(mesh)
}

/// `n` boxes whose bump centre is drawn uniformly from `bump_range`.
pub fn gen_box_bump(n: usize, seed: u64, params: &BoxBumpParams) -> Result<(Ensemble, GroundTruth)> {
    if n < 2 {
        return Err(Error::InvalidParameter("an ensemble needs at least 2 samples".into()));
    }
    params.validate()?;
    let positions: Vec<f64> = (0..n)
        .map(|i| {
            let (lo, hi) = params.bump_range;
            if lo == hi {
                lo
            } else {
                sample_rng(seed, i).gen_range(lo..hi)
            }
        })
        .collect();
    gen_box_bump_at(&positions, seed, params)
}

/// Box-bump ensemble with the given bump fractions.
pub fn gen_box_bump_at(positions: &[f64], seed: u64, params: &BoxBumpParams) -> Result<(Ensemble, GroundTruth)> {
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    for (i, &f) in positions.iter().enumerate() {
        let id = format!("boxbump_{i:03}");
        samples.push(ShapeSample { id: id.clone(), mesh: box_bump_mesh(params, f)?, sdf: None });
        let mut p = BTreeMap::new();
        p.insert("bump_fraction".to_string(), f);
        p.insert("bump_position".to_string(), params.bump_x(f));
        truth.push(SampleTruth {
            id,
            params: p,
            family: None,
            ostium: None,
            ostium_normal: None,
            septum_normal: None,
        });
    }
    let provenance = serde_json::json!({
        "generator": "box_bump",
        "n": positions.len(),
        "seed": seed,
        "params": params,
    });
    Ok((
        Ensemble { samples, world_frame: false, provenance },
        GroundTruth { generator: "box_bump".into(), samples: truth },
    ))
}
