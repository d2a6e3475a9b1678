use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TriangleBvh, TriangleMesh, Vec3};
use crate::{Error, Result};

/// Scalar grid of signed distances: negative inside, positive outside.
/// Values are stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedDistanceVolume {
    dims: [usize; 3],
    spacing: f64,
    origin: Vec3,
    values: Vec<f64>,
}

/// JSON sidecar describing a raw volume file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub origin: [f64; 3],
}

/// Spacing as written by other tools: either one number or one per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spacing {
    Isotropic(f64),
    PerAxis([f64; 3]),
}

impl SignedDistanceVolume {
    pub fn new(dims: [usize; 3], spacing: f64, origin: Vec3, values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidVolume(format!("dims {dims:?} must be at least 2 per axis")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidVolume(format!("spacing {spacing} must be positive")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::InvalidVolume(format!(
                "expected {n} values for dims {dims:?}, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("volume contains non-finite values".into()));
        }
        Ok(Self { dims, spacing, origin, values })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(dims: [usize; 3], spacing: f64, origin: Vec3, f: impl Fn(&Vec3) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f(&(origin + spacing * Vec3::new(i as f64, j as f64, k as f64))));
                }
            }
        }
        Self::new(dims, spacing, origin, values)
    }

    /// Grid covering `[lo, hi]` exactly on nodes from `lo`.
    pub fn grid_for_box(lo: Vec3, hi: Vec3, spacing: f64) -> ([usize; 3], Vec3) {
        let ext = hi - lo;
        let dims = [0, 1, 2].map(|k| ((ext[k] / spacing - 1e-9).ceil().max(1.0) as usize) + 1);
        (dims, lo)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn upper_corner(&self) -> Vec3 {
        self.position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    /// Length of the grid's diagonal.
    pub fn diameter(&self) -> f64 {
        (self.upper_corner() - self.origin).norm()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + self.spacing * Vec3::new(i as f64, j as f64, k as f64)
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            dims: self.dims,
            spacing: Spacing::Isotropic(self.spacing),
            origin: [self.origin.x, self.origin.y, self.origin.z],
        }
    }

    /// True when `p` lies within the grid's node extent.
    pub fn contains(&self, p: &Vec3) -> bool {
        let u = (p - self.origin) / self.spacing;
        (0..3).all(|k| u[k] >= 0.0 && u[k] <= (self.dims[k] - 1) as f64)
    }

    /// Cell index and fractional offsets for continuous grid coordinates,
    /// clamped to the grid.
    fn cell(&self, p: &Vec3) -> ([usize; 3], Vec3) {
        let u = (p - self.origin) / self.spacing;
        let mut idx = [0usize; 3];
        let mut t = Vec3::zeros();
        for k in 0..3 {
            let max_cell = (self.dims[k] - 2) as f64;
            let uk = u[k].clamp(0.0, (self.dims[k] - 1) as f64);
            let c = uk.floor().min(max_cell);
            idx[k] = c as usize;
            t[k] = uk - c;
        }
        (idx, t)
    }

    fn trilinear(&self, p: &Vec3, node: impl Fn(usize, usize, usize) -> f64) -> f64 {
        let ([i, j, k], t) = self.cell(p);
        let mut acc = 0.0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - t.z } else { t.z };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - t.y } else { t.y };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - t.x } else { t.x };
                    acc += wx * wy * wz * node(i + dx, j + dy, k + dz);
                }
            }
        }
        acc
    }

    /// Trilinear interpolation; `None` outside the grid.
    pub fn sample(&self, p: &Vec3) -> Option<f64> {
        self.contains(p).then(|| self.trilinear(p, |i, j, k| self.at(i, j, k)))
    }

    /// Interpolated value at the nearest in-grid point plus the distance to
    /// it, so queries outside the grid stay positive and grow with distance.
    pub fn sample_clamped(&self, p: &Vec3) -> f64 {
        let q = p.sup(&self.origin).inf(&self.upper_corner());
        self.trilinear(&q, |i, j, k| self.at(i, j, k)) + (p - q).norm()
    }

    /// Central-difference gradient at a node (one-sided at the border).
    pub fn node_gradient(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let idx = [i, j, k];
        let mut g = Vec3::zeros();
        for axis in 0..3 {
            let mut lo = idx;
            let mut hi = idx;
            if idx[axis] > 0 {
                lo[axis] -= 1;
            }
            if idx[axis] + 1 < self.dims[axis] {
                hi[axis] += 1;
            }
            let span = (hi[axis] - lo[axis]) as f64 * self.spacing;
            g[axis] = (self.at(hi[0], hi[1], hi[2]) - self.at(lo[0], lo[1], lo[2])) / span;
        }
        g
    }

    /// Smooth gradient: trilinear blend of node central differences.
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let ([i, j, k], t) = self.cell(p);
        let mut acc = Vec3::zeros();
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - t.z } else { t.z };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - t.y } else { t.y };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - t.x } else { t.x };
                    acc += wx * wy * wz * self.node_gradient(i + dx, j + dy, k + dz);
                }
            }
        }
        acc
    }

    /// Outward unit normal of the level set through `p`.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let g = self.gradient(p);
        let n = g.norm();
        if n > 0.0 {
            g / n
        } else {
            Vec3::zeros()
        }
    }

    /// Writes little-endian f32 values plus a JSON sidecar next to it
    /// (`foo.raw` → `foo.json`).
    pub fn save(&self, raw_path: impl AsRef<Path>) -> Result<()> {
        let raw_path = raw_path.as_ref();
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for &v in &self.values {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::write(raw_path, bytes).map_err(|e| Error::io(raw_path, e))?;
        let side = raw_path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.header())?;
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(raw_path: impl AsRef<Path>) -> Result<Self> {
        let raw_path = raw_path.as_ref();
        let side = raw_path.with_extension("json");
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let header: VolumeHeader = serde_json::from_str(&text)?;
        let spacing = match header.spacing {
            Spacing::Isotropic(s) => s,
            Spacing::PerAxis([a, b, c]) => {
                if (a - b).abs() > 1e-12 * a.abs() || (a - c).abs() > 1e-12 * a.abs() {
                    return Err(Error::InvalidVolume(format!(
                        "{}: anisotropic spacing {:?} is not supported",
                        side.display(),
                        [a, b, c]
                    )));
                }
                a
            }
        };
        let bytes = std::fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::InvalidVolume(format!("{}: truncated float data", raw_path.display())));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let [ox, oy, oz] = header.origin;
        Self::new(header.dims, spacing, Vec3::new(ox, oy, oz), values)
    }
}

/// Signed distance volume of a closed outward-oriented mesh.
///
/// Magnitudes are exact point-to-triangle distances. The inside/outside
/// decision is the mesh's winding number, evaluated per grid line as the
/// signed count of surface crossings toward +x.
pub fn mesh_to_sdf(mesh: &TriangleMesh, spacing: f64, padding: f64) -> Result<SignedDistanceVolume> {
    if !(spacing > 0.0) || padding < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "spacing must be positive and padding non-negative (got {spacing}, {padding})"
        )));
    }
    mesh.check_watertight()?;
    let (lo, hi) = mesh.bounding_box();
    let pad = Vec3::repeat(padding);
    let (dims, origin) = SignedDistanceVolume::grid_for_box(lo - pad, hi + pad, spacing);
    sdf_on_grid(mesh, dims, spacing, origin)
}

/// Signed distances of a closed mesh sampled on a given grid.
pub fn sdf_on_grid(mesh: &TriangleMesh, dims: [usize; 3], spacing: f64, origin: Vec3) -> Result<SignedDistanceVolume> {
    mesh.check_watertight()?;
    let winding = line_winding(mesh, dims, spacing, &origin);
    let bvh = TriangleBvh::new(mesh);
    let mut values = Vec::with_capacity(winding.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = origin + spacing * Vec3::new(i as f64, j as f64, k as f64);
                let d = bvh.distance(&p);
                let w = winding[i + dims[0] * (j + dims[1] * k)];
                values.push(if w > 0 { -d } else { d });
            }
        }
    }
    SignedDistanceVolume::new(dims, spacing, origin, values)
}

/// Winding number at every grid node from signed crossings along x lines.
fn line_winding(mesh: &TriangleMesh, dims: [usize; 3], h: f64, origin: &Vec3) -> Vec<i32> {
    let (ny, nz) = (dims[1], dims[2]);
    let mut crossings: Vec<Vec<(f64, i32)>> = vec![Vec::new(); ny * nz];
    for f in 0..mesh.num_faces() {
        let [a, b, c] = mesh.triangle(f);
        let n = (b - a).cross(&(c - a));
        if n.x == 0.0 {
            continue;
        }
        let s = n.x.signum();
        let ylo = a.y.min(b.y).min(c.y);
        let yhi = a.y.max(b.y).max(c.y);
        let zlo = a.z.min(b.z).min(c.z);
        let zhi = a.z.max(b.z).max(c.z);
        let j0 = (((ylo - origin.y) / h).floor().max(0.0)) as usize;
        let j1 = (((yhi - origin.y) / h).ceil().max(0.0) as usize).min(ny - 1);
        let k0 = (((zlo - origin.z) / h).floor().max(0.0)) as usize;
        let k1 = (((zhi - origin.z) / h).ceil().max(0.0) as usize).min(nz - 1);
        for k in k0..=k1 {
            let qz = origin.z + h * k as f64;
            for j in j0..=j1 {
                let qy = origin.y + h * j as f64;
                let inside = [(a, b), (b, c), (c, a)]
                    .iter()
                    .all(|(u, v)| s * edge_function(u, v, qy, qz) > 0.0);
                if inside {
                    let x = a.x - (n.y * (qy - a.y) + n.z * (qz - a.z)) / n.x;
                    crossings[j + ny * k].push((x, s as i32));
                }
            }
        }
    }
    let mut winding = vec![0i32; dims[0] * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            let line = &mut crossings[j + ny * k];
            if line.is_empty() {
                continue;
            }
            line.sort_by(|p, q| q.0.total_cmp(&p.0));
            let mut acc = 0;
            let mut next = 0;
            for i in (0..dims[0]).rev() {
                let x = origin.x + h * i as f64;
                while next < line.len() && line[next].0 > x {
                    acc += line[next].1;
                    next += 1;
                }
                winding[i + dims[0] * (j + ny * k)] = acc;
            }
        }
    }
    winding
}

/// 2D orientation of `q` against the (y, z) projection of edge `u → v`.
///
/// Evaluated with endpoints in canonical order so the two faces sharing an
/// edge see exactly opposite values; exact zeros are resolved by a fixed
/// symbolic perturbation of `q`, so every grid line is counted once per
/// surface sheet.
fn edge_function(u: &Vec3, v: &Vec3, qy: f64, qz: f64) -> f64 {
    let forward = (u.y, u.z) < (v.y, v.z);
    let (lo, hi) = if forward { (u, v) } else { (v, u) };
    let (dy, dz) = (hi.y - lo.y, hi.z - lo.z);
    let mut e = dy * (qz - lo.z) - dz * (qy - lo.y);
    if e == 0.0 {
        e = if dz != 0.0 { -dz.signum() } else { dy.signum() };
    }
    if forward {
        e
    } else {
        -e
    }
}

/// Moves `point` onto the zero level set by damped Newton steps along the
/// interpolated gradient, each clamped to one voxel.
pub fn project_to_surface(point: &Vec3, sdf: &SignedDistanceVolume) -> Result<Vec3> {
    const MAX_ITERS: usize = 100;
    let h = sdf.spacing();
    let tol = 1e-3 * h;
    let kicks = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, -1.0),
    ];
    let mut kick = 0;
    if !point.iter().all(|c| c.is_finite()) {
        return Err(Error::Projection(format!("point {point:?} is not finite")));
    }
    // points off the grid restart from the nearest grid point
    let mut p = point.sup(&sdf.origin()).inf(&sdf.upper_corner());
    for _ in 0..MAX_ITERS {
        let phi = sdf.sample(&p).unwrap_or_else(|| sdf.sample_clamped(&p));
        if phi.abs() <= tol {
            return Ok(p);
        }
        let g = sdf.gradient(&p);
        let g2 = g.norm_squared();
        if g2 < 1e-12 {
            p += 0.5 * h * kicks[kick % kicks.len()];
            kick += 1;
            continue;
        }
        let mut step = -phi * g / g2;
        let len = step.norm();
        if len > h {
            step *= h / len;
        }
        p = (p + step).sup(&sdf.origin()).inf(&sdf.upper_corner());
    }
    Err(Error::Projection(format!(
        "no convergence from {point:?} after {MAX_ITERS} iterations"
    )))
}
