use super::{TriangleMesh, Vec3};

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + v * ab;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + w * ac;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Clone, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `start..start + count` into `order`. Inner: `count == 0`,
    /// children at `start` and `start + 1`.
    start: usize,
    count: usize,
}

/// Axis-aligned bounding-volume hierarchy over a mesh's triangles for
/// closest-point queries.
#[derive(Clone, Debug)]
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

const LEAF_SIZE: usize = 4;

impl TriangleBvh {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.num_faces()).map(|f| mesh.triangle(f)).collect();
        let centers: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = vec![Node {
            lo: Vec3::zeros(),
            hi: Vec3::zeros(),
            start: 0,
            count: tris.len(),
        }];
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (nodes[ni].start, nodes[ni].count);
            let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
            for &t in &order[start..start + count] {
                for v in &tris[t] {
                    lo = lo.inf(v);
                    hi = hi.sup(v);
                }
            }
            nodes[ni].lo = lo;
            nodes[ni].hi = hi;
            if count <= LEAF_SIZE {
                continue;
            }
            let ext = hi - lo;
            let axis = ext.imax();
            let slice = &mut order[start..start + count];
            let mid = count / 2;
            slice.select_nth_unstable_by(mid, |&a, &b| {
                centers[a][axis].total_cmp(&centers[b][axis])
            });
            let child = nodes.len();
            nodes.push(Node { lo, hi, start, count: mid });
            nodes.push(Node { lo, hi, start: start + mid, count: count - mid });
            nodes[ni].start = child;
            nodes[ni].count = 0;
            stack.push(child);
            stack.push(child + 1);
        }
        Self { tris, order, nodes }
    }

    /// Closest surface point: `(squared distance, face index, point)`.
    pub fn closest_point(&self, p: &Vec3) -> (f64, usize, Vec3) {
        let mut best = (f64::INFINITY, usize::MAX, Vec3::zeros());
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_dist2(p, &node.lo, &node.hi) >= best.0 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = &self.tris[t];
                    let q = closest_point_on_triangle(p, a, b, c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && t < best.1) {
                        best = (d2, t, q);
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = box_dist2(p, &self.nodes[l].lo, &self.nodes[l].hi);
                let dr = box_dist2(p, &self.nodes[r].lo, &self.nodes[r].hi);
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.closest_point(p).0.sqrt()
    }
}

fn box_dist2(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let v = if p[k] < lo[k] {
            lo[k] - p[k]
        } else if p[k] > hi[k] {
            p[k] - hi[k]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force() {
        let mesh = TriangleMesh::icosphere(2, 1.5, Vec3::new(0.2, 0.0, -0.1));
        let bvh = TriangleBvh::new(&mesh);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let brute = (0..mesh.num_faces())
                .map(|f| {
                    let [a, b, c] = mesh.triangle(f);
                    (closest_point_on_triangle(&p, &a, &b, &c) - p).norm_squared()
                })
                .fold(f64::INFINITY, f64::min);
            let (d2, _, q) = bvh.closest_point(&p);
            assert!((d2 - brute).abs() < 1e-12);
            assert!(((q - p).norm_squared() - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        assert_eq!(closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        assert_eq!(closest_point_on_triangle(&Vec3::new(0.25, 0.25, 3.0), &a, &b, &c), Vec3::new(0.25, 0.25, 0.0));
        let q = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }
}
