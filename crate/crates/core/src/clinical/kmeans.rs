use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const MAX_ITERS: usize = 300;

/// Result of k-means clustering. Labels are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// k × D cluster centres.
    pub centers: DMatrix<f64>,
    pub inertia: f64,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` runs by
/// inertia. `features` is N × D.
pub fn kmeans(features: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    let n = features.nrows();
    if k == 0 || n < k {
        return Err(Error::InvalidParameter(format!("k-means needs 1 ≤ k ≤ N (k = {k}, N = {n})")));
    }
    let rows: Vec<DVector<f64>> = features.row_iter().map(|r| r.transpose()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(&rows, plus_plus(&rows, k, &mut rng));
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn dist2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

fn plus_plus(rows: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut centers = vec![rows[rng.gen_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| dist2(r, &centers[0])).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.gen_range(0..rows.len()),
        };
        centers.push(rows[next].clone());
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(dist2(r, centers.last().unwrap()));
        }
    }
    centers
}

fn nearest(row: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(row, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(rows: &[DVector<f64>], mut centers: Vec<DVector<f64>>) -> ClusterAssignment {
    let k = centers.len();
    let dim = rows[0].len();
    let mut labels = vec![usize::MAX; rows.len()];
    for _ in 0..MAX_ITERS {
        let assigned: Vec<(usize, f64)> = rows.iter().map(|r| nearest(r, &centers)).collect();
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let changed = new_labels != labels;
        labels = new_labels;
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            sums[l] += r;
            counts[l] += 1;
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] == 0 {
                // take the point farthest from its own centre
                let far = (0..rows.len())
                    .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)))
                    .unwrap();
                centers[c] = rows[far].clone();
                reseeded = true;
            } else {
                centers[c] = &sums[c] / counts[c] as f64;
            }
        }
        if !changed && !reseeded {
            break;
        }
    }
    let labels: Vec<usize> = rows.iter().map(|r| nearest(r, &centers).0).collect();
    let inertia = rows.iter().zip(&labels).map(|(r, &l)| dist2(r, &centers[l])).sum();
    let centers = DMatrix::from_fn(k, dim, |i, j| centers[i][j]);
    ClusterAssignment { labels, centers, inertia }
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        return if (index - expected).abs() < 1e-12 { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}
