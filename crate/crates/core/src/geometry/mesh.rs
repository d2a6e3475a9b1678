use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{bounds, RigidTransform, Vec3};
use crate::{Error, Result};

/// Closed triangle surface. Faces are counter-clockwise seen from outside.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

/// Faces whose area falls below this fraction of the squared bounding
/// diagonal are treated as degenerate.
const DEGENERATE_AREA: f64 = 1e-15;

impl TriangleMesh {
    /// Validates indices and rejects zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no vertices or no faces".into()));
        }
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} is not finite")));
        }
        let nv = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "face {i} references vertex out of range ({f:?}, {nv} vertices)"
                )));
            }
        }
        let mesh = Self { vertices, faces };
        let (lo, hi) = bounds(&mesh.vertices).unwrap();
        let tol = DEGENERATE_AREA * (hi - lo).norm_squared();
        if let Some(i) = (0..mesh.faces.len()).find(|&i| !(mesh.face_area(i) > tol)) {
            return Err(Error::InvalidMesh(format!(
                "face {i} {:?} is degenerate (area {:.3e})",
                mesh.faces[i],
                mesh.face_area(i)
            )));
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized normal, twice the area in length.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_cross(f).normalize()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_center(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (a + b + c) / 3.0
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    /// Centroid of the enclosed solid.
    pub fn centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut vol = 0.0;
        for &[a, b, c] in &self.faces {
            let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            let v = pa.dot(&pb.cross(&pc)) / 6.0;
            acc += v * (pa + pb + pc) / 4.0;
            vol += v;
        }
        if vol.abs() > f64::EPSILON {
            acc / vol
        } else {
            self.surface_centroid()
        }
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let a = self.face_area(f);
            acc += a * self.face_center(f);
            total += a;
        }
        acc / total
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bounds(&self.vertices).unwrap()
    }

    /// Edges not paired with exactly one oppositely directed twin.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        let mut bad: Vec<(usize, usize)> = directed
            .iter()
            .filter(|(&(a, b), &count)| count != 1 || directed.get(&(b, a)) != Some(&1))
            .map(|(&e, _)| e)
            .collect();
        bad.sort_unstable();
        bad
    }

    /// Requires a closed, consistently oriented, outward-facing surface.
    pub fn check_watertight(&self) -> Result<()> {
        let edges = self.boundary_edges();
        if !edges.is_empty() {
            return Err(Error::NotWatertight {
                count: edges.len(),
                edges: edges.into_iter().take(8).collect(),
            });
        }
        if self.volume() <= 0.0 {
            return Err(Error::InvalidMesh("faces are oriented inward".into()));
        }
        Ok(())
    }

    /// `V − E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                used[f[k]] = true;
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - edges.len() as i64 + self.faces.len() as i64
    }

    /// Generalized winding number of `p` (solid-angle sum over faces / 4π).
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for &[a, b, c] in &self.faces {
            let (x, y, z) = (self.vertices[a] - p, self.vertices[b] - p, self.vertices[c] - p);
            let (lx, ly, lz) = (x.norm(), y.norm(), z.norm());
            let num = x.dot(&y.cross(&z));
            let den = lx * ly * lz + x.dot(&y) * lz + y.dot(&z) * lx + z.dot(&x) * ly;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    pub fn transformed(&self, xf: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| xf.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn translated(&self, t: Vec3) -> TriangleMesh {
        self.transformed(&RigidTransform::translation(t))
    }

    /// Same surface with reversed winding.
    pub fn flipped(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    /// Replaces vertex positions, keeping connectivity.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<TriangleMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        TriangleMesh::new(vertices, self.faces.clone())
    }

    /// Subdivided icosahedron with vertices on a sphere. Vertex order is
    /// deterministic: the 12 base vertices, then edge midpoints in the order
    /// they are created.
    pub fn icosphere(level: u32, radius: f64, center: Vec3) -> TriangleMesh {
        let (dirs, faces) = icosphere_directions(level);
        TriangleMesh {
            vertices: dirs.iter().map(|d| center + radius * d).collect(),
            faces,
        }
    }

    /// Axis-aligned ellipsoid from a radially scaled icosphere.
    pub fn ellipsoid(level: u32, semi_axes: Vec3, center: Vec3) -> TriangleMesh {
        let (dirs, faces) = icosphere_directions(level);
        TriangleMesh {
            vertices: dirs
                .iter()
                .map(|d| center + d.component_mul(&semi_axes))
                .collect(),
            faces,
        }
    }

    /// Torus about the z axis (genus 1).
    pub fn torus(major: f64, minor: f64, segments: usize, rings: usize) -> TriangleMesh {
        use std::f64::consts::TAU;
        let mut vertices = Vec::with_capacity(segments * rings);
        for i in 0..segments {
            let u = TAU * i as f64 / segments as f64;
            for j in 0..rings {
                let v = TAU * j as f64 / rings as f64;
                let r = major + minor * v.cos();
                vertices.push(Vec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
            }
        }
        let idx = |i: usize, j: usize| (i % segments) * rings + (j % rings);
        let mut faces = Vec::new();
        for i in 0..segments {
            for j in 0..rings {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        TriangleMesh { vertices, faces }
    }

    /// Axis-aligned box from two corners, two triangles per face.
    pub fn cuboid(lo: Vec3, hi: Vec3) -> TriangleMesh {
        let v = |x: usize, y: usize, z: usize| {
            Vec3::new(
                if x == 0 { lo.x } else { hi.x },
                if y == 0 { lo.y } else { hi.y },
                if z == 0 { lo.z } else { hi.z },
            )
        };
        let mut vertices = Vec::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    vertices.push(v(x, y, z));
                }
            }
        }
        // index = x + 2y + 4z
        let quads = [
            [0, 2, 3, 1], // z = lo
            [4, 5, 7, 6], // z = hi
            [0, 1, 5, 4], // y = lo
            [2, 6, 7, 3], // y = hi
            [0, 4, 6, 2], // x = lo
            [1, 3, 7, 5], // x = hi
        ];
        let faces = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriangleMesh { vertices, faces }
    }

    /// Parses the OBJ subset of `v x y z` and `f i j k` lines (1-based).
    pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r').trim();
            let lineno = lineno + 1;
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let xyz: Vec<f64> = tok
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| err(lineno, format!("bad vertex coordinate: {e}")))?;
                    if xyz.len() != 3 {
                        return Err(err(lineno, format!("vertex needs 3 coordinates, got {}", xyz.len())));
                    }
                    vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = tok
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| err(lineno, format!("bad face index: {e}")))?;
                    if idx.len() != 3 {
                        return Err(err(lineno, format!("only triangles are supported, got {} indices", idx.len())));
                    }
                    if idx.iter().any(|&i| i == 0) {
                        return Err(err(lineno, "face indices are 1-based".into()));
                    }
                    faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                None => {}
                Some(t) if t.starts_with('#') => {}
                Some(other) => {
                    return Err(err(lineno, format!("unsupported OBJ directive `{other}`")));
                }
            }
        }
        TriangleMesh::new(vertices, faces).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text, path)
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.faces.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }
}

/// Unit icosphere directions and faces.
pub fn icosphere_directions(level: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn icosphere_counts_and_topology() {
        for level in 0..4 {
            let m = TriangleMesh::icosphere(level, 1.0, Vec3::zeros());
            assert_eq!(m.vertices().len(), 10 * 4usize.pow(level) + 2);
            assert_eq!(m.euler_characteristic(), 2);
            m.check_watertight().unwrap();
        }
    }

    #[test]
    fn cube_volume_area_centroid() {
        let m = TriangleMesh::cuboid(Vec3::new(-0.5, -0.5, -0.5), Vec3::new(0.5, 0.5, 0.5));
        m.check_watertight().unwrap();
        assert!((m.volume() - 1.0).abs() < 1e-12);
        assert!((m.area() - 6.0).abs() < 1e-12);
        assert!(m.centroid().norm() < 1e-12);
        assert!((m.winding_number(&Vec3::zeros()) - 1.0).abs() < 1e-9);
        assert!(m.winding_number(&Vec3::new(2.0, 0.0, 0.0)).abs() < 1e-9);
    }

    #[test]
    fn torus_is_genus_one() {
        let t = TriangleMesh::torus(2.0, 0.5, 24, 12);
        t.check_watertight().unwrap();
        assert_eq!(t.euler_characteristic(), 0);
        let expected = 2.0 * PI * PI * 2.0 * 0.25;
        assert!((t.volume() - expected).abs() / expected < 0.08);
    }

    #[test]
    fn open_mesh_reports_boundary_edges() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let faces = m.faces()[1..].to_vec();
        let open = TriangleMesh::new(m.vertices().to_vec(), faces).unwrap();
        match open.check_watertight() {
            Err(Error::NotWatertight { count, .. }) => assert_eq!(count, 3),
            other => panic!("expected watertight error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_face_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)];
        assert!(matches!(
            TriangleMesh::new(v, vec![[0, 1, 2]]),
            Err(Error::InvalidMesh(_))
        ));
    }

    #[test]
    fn obj_round_trip_with_crlf() {
        let m = TriangleMesh::icosphere(1, 2.0, Vec3::new(1.0, 2.0, 3.0));
        let text = m.to_obj_string().replace('\n', "\r\n");
        let back = TriangleMesh::parse_obj(&text, Path::new("mem.obj")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn obj_rejects_bad_lines() {
        let bad = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3 4\n";
        match TriangleMesh::parse_obj(bad, Path::new("x.obj")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }
}
