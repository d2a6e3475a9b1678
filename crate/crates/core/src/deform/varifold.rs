use std::collections::BTreeMap;

use nalgebra::Matrix3;

use crate::geometry::{TriangleMesh, Vec3};

/// Pairs farther apart than sqrt(CUTOFF)·σ_W contribute below e^-30 and are
/// skipped in the optimisation terms.
const CUTOFF: f64 = 30.0;

/// Face centre and half cross product (area times unit normal).
fn face_atoms(vertices: &[Vec3], faces: &[[usize; 3]]) -> (Vec<Vec3>, Vec<Vec3>) {
    faces
        .iter()
        .map(|&[a, b, c]| {
            let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
            ((pa + pb + pc) / 3.0, 0.5 * (pb - pa).cross(&(pc - pa)))
        })
        .unzip()
}

/// `⟨A, B⟩ = Σ_k Σ_l a_k a_l exp(-|c_k - c_l|² / σ²) (n_k · n_l)²`.
pub fn varifold_inner(a: &TriangleMesh, b: &TriangleMesh, sigma_w: f64) -> f64 {
    let (ca, wa) = face_atoms(a.vertices(), a.faces());
    let (cb, wb) = face_atoms(b.vertices(), b.faces());
    let s2 = sigma_w * sigma_w;
    let mut total = 0.0;
    for (c1, w1) in ca.iter().zip(&wa) {
        let n1 = w1.norm();
        if n1 == 0.0 {
            continue;
        }
        for (c2, w2) in cb.iter().zip(&wb) {
            let n2 = w2.norm();
            if n2 == 0.0 {
                continue;
            }
            total += (-(c1 - c2).norm_squared() / s2).exp() * w1.dot(w2).powi(2) / (n1 * n2);
        }
    }
    total
}

/// Squared varifold distance `⟨A,A⟩ - 2⟨A,B⟩ + ⟨B,B⟩`, clamped at zero.
pub fn varifold_distance_squared(a: &TriangleMesh, b: &TriangleMesh, sigma_w: f64) -> f64 {
    (varifold_inner(a, a, sigma_w) - 2.0 * varifold_inner(a, b, sigma_w) + varifold_inner(b, b, sigma_w)).max(0.0)
}

pub fn varifold_distance(a: &TriangleMesh, b: &TriangleMesh, sigma_w: f64) -> f64 {
    varifold_distance_squared(a, b, sigma_w).sqrt()
}

/// A fixed surface as weighted orientation tensors `Σ a n nᵀ` at points.
/// One atom per face reproduces the mesh exactly.
#[derive(Clone, Debug)]
pub(crate) struct Target {
    centers: Vec<Vec3>,
    tensors: Vec<Matrix3<f64>>,
    pub self_inner: f64,
}

impl Target {
    /// Exact when `cell` is `None`; otherwise faces are merged per cubic
    /// cell of that size, keeping the area-weighted centre.
    pub fn new(mesh: &TriangleMesh, sigma_w: f64, cell: Option<f64>) -> Self {
        let (centers, ws) = face_atoms(mesh.vertices(), mesh.faces());
        let tensor = |w: &Vec3| {
            let n = w.norm();
            if n == 0.0 {
                Matrix3::zeros()
            } else {
                w * w.transpose() / n
            }
        };
        let (centers, tensors) = match cell {
            None => (centers, ws.iter().map(tensor).collect()),
            Some(size) => {
                let mut bins: BTreeMap<[i64; 3], (Vec3, f64, Matrix3<f64>)> = BTreeMap::new();
                for (c, w) in centers.iter().zip(&ws) {
                    let key = [0, 1, 2].map(|i| (c[i] / size).floor() as i64);
                    let e = bins.entry(key).or_insert((Vec3::zeros(), 0.0, Matrix3::zeros()));
                    let area = w.norm();
                    e.0 += area * c;
                    e.1 += area;
                    e.2 += tensor(w);
                }
                bins.into_values()
                    .filter(|(_, a, _)| *a > 0.0)
                    .map(|(c, a, t)| (c / a, t))
                    .unzip()
            }
        };
        let mut t = Self { centers, tensors, self_inner: 0.0 };
        let s2 = sigma_w * sigma_w;
        let mut total = 0.0;
        for i in 0..t.centers.len() {
            for j in 0..t.centers.len() {
                let k = (-(t.centers[i] - t.centers[j]).norm_squared() / s2).exp();
                total += k * t.tensors[i].dot(&t.tensors[j]);
            }
        }
        t.self_inner = total;
        t
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.centers.len()
    }
}

/// Squared varifold distance between the mesh with the given vertex
/// positions and `target`, with its gradient with respect to the vertices.
pub(crate) fn data_term(vertices: &[Vec3], faces: &[[usize; 3]], target: &Target, sigma_w: f64) -> (f64, Vec<Vec3>) {
    let (centers, ws) = face_atoms(vertices, faces);
    let s2 = sigma_w * sigma_w;
    let f = faces.len();
    let norms: Vec<f64> = ws.iter().map(|w| w.norm()).collect();
    let mut g_c = vec![Vec3::zeros(); f];
    let mut g_w = vec![Vec3::zeros(); f];
    let mut self_inner = 0.0;
    let mut cross = 0.0;
    for k in 0..f {
        if norms[k] == 0.0 {
            continue;
        }
        let (ck, wk, nk) = (centers[k], ws[k], norms[k]);
        self_inner += nk * nk;
        g_w[k] += 2.0 * wk;
        // ⟨A,A⟩ is symmetric: each unordered pair once, credited to both faces
        for l in k + 1..f {
            if norms[l] == 0.0 {
                continue;
            }
            let d = ck - centers[l];
            let r2 = d.norm_squared();
            if r2 > CUTOFF * s2 {
                continue;
            }
            let kv = (-r2 / s2).exp();
            let (wl, nl) = (ws[l], norms[l]);
            let dot = wk.dot(&wl);
            let val = dot * dot / (nk * nl);
            self_inner += 2.0 * kv * val;
            let gc = (-4.0 * kv * val / s2) * d;
            g_c[k] += gc;
            g_c[l] -= gc;
            g_w[k] += 2.0 * kv * (2.0 * dot * wl / (nk * nl) - val * wk / (nk * nk));
            g_w[l] += 2.0 * kv * (2.0 * dot * wk / (nk * nl) - val * wl / (nl * nl));
        }
        for (c, t) in target.centers.iter().zip(&target.tensors) {
            let d = ck - c;
            let r2 = d.norm_squared();
            if r2 > CUTOFF * s2 {
                continue;
            }
            let kv = (-r2 / s2).exp();
            let tw = t * wk;
            let val = wk.dot(&tw) / nk;
            cross += kv * val;
            g_c[k] += (4.0 * kv * val / s2) * d;
            g_w[k] -= 2.0 * kv * (2.0 * tw / nk - val * wk / (nk * nk));
        }
    }
    let mut grad = vec![Vec3::zeros(); vertices.len()];
    for (k, &[a, b, c]) in faces.iter().enumerate() {
        let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
        let gc = g_c[k] / 3.0;
        let gw = g_w[k];
        grad[a] += gc + 0.5 * (pb - pc).cross(&gw);
        grad[b] += gc + 0.5 * (pc - pa).cross(&gw);
        grad[c] += gc + 0.5 * gw.cross(&(pb - pa));
    }
    (self_inner - 2.0 * cross + target.self_inner, grad)
}
