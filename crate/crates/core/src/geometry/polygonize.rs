use std::collections::HashMap;

use super::{SignedDistanceVolume, TriangleMesh, Vec3};
use crate::{Error, Result};

/// Corner offsets of a cube indexed by `dx + 2·dy + 4·dz`.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Six tetrahedra sharing the 0–7 diagonal. Neighbouring cubes split their
/// shared faces the same way, so the extracted surface is closed.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Extracts the zero level set as a closed triangle mesh by marching
/// tetrahedra. Faces are oriented toward increasing values (outward).
pub fn polygonize(sdf: &SignedDistanceVolume) -> Result<TriangleMesh> {
    let [nx, ny, nz] = sdf.dims();
    let eps = 1e-3 * sdf.spacing();
    let snapped = |v: f64| if v.abs() < eps { eps } else { v };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut welded: HashMap<(usize, usize), usize> = HashMap::new();

    let mut edge_vertex = |a: usize, b: usize, pa: &Vec3, pb: &Vec3, va: f64, vb: f64, vertices: &mut Vec<Vec3>| {
        let key = (a.min(b), a.max(b));
        *welded.entry(key).or_insert_with(|| {
            let t = va / (va - vb);
            vertices.push(pa + t * (pb - pa));
            vertices.len() - 1
        })
    };

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut ids = [0usize; 8];
                let mut pos = [Vec3::zeros(); 8];
                let mut val = [0.0; 8];
                for (c, off) in CORNERS.iter().enumerate() {
                    let (ci, cj, ck) = (i + off[0], j + off[1], k + off[2]);
                    ids[c] = sdf.index(ci, cj, ck);
                    pos[c] = sdf.position(ci, cj, ck);
                    val[c] = snapped(sdf.values()[ids[c]]);
                }
                let all_neg = val.iter().all(|&v| v < 0.0);
                let all_pos = val.iter().all(|&v| v > 0.0);
                if all_neg || all_pos {
                    continue;
                }
                for tet in &TETS {
                    let (neg, posv): (Vec<usize>, Vec<usize>) = tet.iter().partition(|&&c| val[c] < 0.0);
                    if neg.is_empty() || posv.is_empty() {
                        continue;
                    }
                    let centroid = |s: &[usize]| s.iter().map(|&c| pos[c]).sum::<Vec3>() / s.len() as f64;
                    let outward = centroid(&posv) - centroid(&neg);
                    let mut vert = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
                        edge_vertex(ids[a], ids[b], &pos[a], &pos[b], val[a], val[b], vertices)
                    };
                    let emit = |tri: [usize; 3], faces: &mut Vec<[usize; 3]>, vertices: &[Vec3]| {
                        let [p, q, r] = tri.map(|t| vertices[t]);
                        if (q - p).cross(&(r - p)).dot(&outward) >= 0.0 {
                            faces.push(tri);
                        } else {
                            faces.push([tri[0], tri[2], tri[1]]);
                        }
                    };
                    match (neg.len(), posv.len()) {
                        (1, 3) => {
                            let a = neg[0];
                            let tri = [vert(a, posv[0], &mut vertices), vert(a, posv[1], &mut vertices), vert(a, posv[2], &mut vertices)];
                            emit(tri, &mut faces, &vertices);
                        }
                        (3, 1) => {
                            let b = posv[0];
                            let tri = [vert(neg[0], b, &mut vertices), vert(neg[1], b, &mut vertices), vert(neg[2], b, &mut vertices)];
                            emit(tri, &mut faces, &vertices);
                        }
                        _ => {
                            let (a, b, c, d) = (neg[0], neg[1], posv[0], posv[1]);
                            let q = [
                                vert(a, c, &mut vertices),
                                vert(a, d, &mut vertices),
                                vert(b, d, &mut vertices),
                                vert(b, c, &mut vertices),
                            ];
                            emit([q[0], q[1], q[2]], &mut faces, &vertices);
                            emit([q[0], q[2], q[3]], &mut faces, &vertices);
                        }
                    }
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyLevelSet("volume".into()));
    }
    TriangleMesh::new(vertices, faces)
}
