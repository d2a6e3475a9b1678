use nalgebra::{Cholesky, DMatrix};

use crate::geometry::Vec3;

/// Ensemble entropy `H(Z) = ½ Σ log(λᵢ + α)` over all dM eigenvalues of the
/// shape-space covariance (divisor N−1), evaluated through the N × N Gram
/// matrix: the dM − N eigenvalues outside its range are exactly zero.
pub fn ensemble_entropy(shapes: &[Vec<Vec3>], alpha: f64) -> f64 {
    ensemble_entropy_with_gradient(shapes, alpha).0
}

/// `H(Z)` and its gradient with respect to every particle,
/// `∂H/∂Z = (G + α(N−1) I)⁻¹ Y` with `Y` the centred data and `G = Y Yᵀ`.
pub fn ensemble_entropy_with_gradient(shapes: &[Vec<Vec3>], alpha: f64) -> (f64, Vec<Vec<Vec3>>) {
    assert!(alpha > 0.0, "alpha must be positive");
    let n = shapes.len();
    let m = shapes.first().map_or(0, Vec::len);
    let dm = 3 * m;
    if n < 2 {
        return (0.5 * dm as f64 * alpha.ln(), vec![vec![Vec3::zeros(); m]; n]);
    }
    let mean: Vec<Vec3> = (0..m).map(|j| shapes.iter().map(|s| s[j]).sum::<Vec3>() / n as f64).collect();
    let y = DMatrix::from_fn(n, dm, |i, c| shapes[i][c / 3][c % 3] - mean[c / 3][c % 3]);
    let gram = &y * y.transpose();
    let dof = (n - 1) as f64;
    let beta = alpha * dof;
    let mut shifted = gram.clone();
    for i in 0..n {
        shifted[(i, i)] += beta;
    }
    let chol = Cholesky::new(shifted).expect("shifted Gram matrix is positive definite");
    // log det(G/(N−1) + αI_N) = log det(G + βI) − N log(N−1)
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() - n as f64 * dof.ln();
    let value = 0.5 * (logdet + (dm as f64 - n as f64) * alpha.ln());
    let g = chol.solve(&y);
    let grad = (0..n)
        .map(|i| (0..m).map(|j| Vec3::new(g[(i, 3 * j)], g[(i, 3 * j + 1)], g[(i, 3 * j + 2)])).collect())
        .collect();
    (value, grad)
}

/// Diagonal curvature of `H(Z)` per shape, `[(G + βI)⁻¹]ₙₙ − 1/(Nβ)`,
/// treating the Gram matrix as fixed. Used to precondition descent steps.
pub(crate) fn ensemble_curvature(shapes: &[Vec<Vec3>], alpha: f64) -> Vec<f64> {
    let n = shapes.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let m = shapes[0].len();
    let mean: Vec<Vec3> = (0..m).map(|j| shapes.iter().map(|s| s[j]).sum::<Vec3>() / n as f64).collect();
    let y = DMatrix::from_fn(n, 3 * m, |i, c| shapes[i][c / 3][c % 3] - mean[c / 3][c % 3]);
    let beta = alpha * (n - 1) as f64;
    let shifted = &y * y.transpose() + DMatrix::identity(n, n) * beta;
    let inv = Cholesky::new(shifted)
        .expect("shifted Gram matrix is positive definite")
        .inverse();
    (0..n).map(|i| (inv[(i, i)] - 1.0 / (n as f64 * beta)).max(0.0)).collect()
}

/// Parzen sampling term `Σₘ log Σ_{m'≠m} exp(−‖xₘ − x_{m'}‖² / 2σ²)`.
/// Larger when particles cluster; zero for a single particle.
pub fn sampling_entropy(points: &[Vec3], sigma: f64) -> f64 {
    sampling_entropy_with_gradient(points, sigma).0
}

pub fn sampling_entropy_with_gradient(points: &[Vec3], sigma: f64) -> (f64, Vec<Vec3>) {
    let m = points.len();
    if m < 2 {
        return (0.0, vec![Vec3::zeros(); m]);
    }
    let s2 = sigma * sigma;
    let mut value = 0.0;
    let mut weights = vec![0.0; m * m];
    for i in 0..m {
        let mut amax = f64::NEG_INFINITY;
        for k in 0..m {
            if k != i {
                let a = -(points[i] - points[k]).norm_squared() / (2.0 * s2);
                weights[i * m + k] = a;
                amax = amax.max(a);
            }
        }
        let mut sum = 0.0;
        for k in (0..m).filter(|&k| k != i) {
            let e = (weights[i * m + k] - amax).exp();
            weights[i * m + k] = e;
            sum += e;
        }
        for k in (0..m).filter(|&k| k != i) {
            weights[i * m + k] /= sum;
        }
        value += amax + sum.ln();
    }
    let grad = (0..m)
        .map(|j| {
            let mut g = Vec3::zeros();
            for k in (0..m).filter(|&k| k != j) {
                g -= (weights[j * m + k] + weights[k * m + j]) * (points[j] - points[k]);
            }
            g / s2
        })
        .collect();
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_shapes(n: usize, m: usize, seed: u64) -> Vec<Vec<Vec3>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..m).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect())
            .collect()
    }

    /// Reference value from the full dM × dM covariance.
    fn entropy_direct(shapes: &[Vec<Vec3>], alpha: f64) -> f64 {
        let n = shapes.len();
        let dm = 3 * shapes[0].len();
        let rows: Vec<Vec<f64>> = shapes.iter().map(|s| s.iter().flat_map(|p| [p.x, p.y, p.z]).collect()).collect();
        let mean: Vec<f64> = (0..dm).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
        let cov = DMatrix::from_fn(dm, dm, |a, b| {
            rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64
        });
        cov.symmetric_eigenvalues().iter().map(|l| (l.max(0.0) + alpha).ln()).sum::<f64>() * 0.5
    }

    #[test]
    fn identical_shapes_give_log_alpha() {
        let s = random_shapes(1, 5, 1).remove(0);
        let h = ensemble_entropy(&[s.clone(), s.clone(), s], 0.3);
        assert!((h - 7.5 * 0.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_offset_particle() {
        let a = vec![Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)];
        let mut b = a.clone();
        b[1].x += 2.0;
        let alpha: f64 = 0.01;
        // one eigenvalue (2 mm)² · ½ · 2 / 1 = 2, the other five zero
        let expected = 0.5 * ((2.0 + alpha).ln() + 5.0 * alpha.ln());
        assert!((ensemble_entropy(&[a, b], alpha) - expected).abs() < 1e-9);
    }

    #[test]
    fn matches_full_covariance() {
        let shapes = random_shapes(6, 4, 2);
        for alpha in [1e-3, 0.1, 2.0] {
            let (a, b) = (ensemble_entropy(&shapes, alpha), entropy_direct(&shapes, alpha));
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn increases_with_alpha() {
        let shapes = random_shapes(4, 3, 3);
        let mut last = f64::NEG_INFINITY;
        for k in 0..8 {
            let h = ensemble_entropy(&shapes, 1e-3 * 2f64.powi(k));
            assert!(h > last);
            last = h;
        }
    }

    #[test]
    fn ensemble_gradient_matches_finite_differences() {
        let shapes = random_shapes(5, 3, 4);
        let alpha = 0.05;
        let (_, grad) = ensemble_entropy_with_gradient(&shapes, alpha);
        let eps = 1e-6;
        for (n, j, c) in [(0, 0, 0), (2, 1, 2), (4, 2, 1)] {
            let mut plus = shapes.clone();
            let mut minus = shapes.clone();
            plus[n][j][c] += eps;
            minus[n][j][c] -= eps;
            let fd = (ensemble_entropy(&plus, alpha) - ensemble_entropy(&minus, alpha)) / (2.0 * eps);
            assert!((fd - grad[n][j][c]).abs() < 1e-6 * fd.abs().max(1.0), "{fd} vs {}", grad[n][j][c]);
        }
    }

    #[test]
    fn sampling_gradient_matches_finite_differences() {
        let pts = random_shapes(1, 7, 5).remove(0);
        let sigma = 0.4;
        let (_, grad) = sampling_entropy_with_gradient(&pts, sigma);
        let eps = 1e-6;
        for j in 0..pts.len() {
            for c in 0..3 {
                let mut plus = pts.clone();
                let mut minus = pts.clone();
                plus[j][c] += eps;
                minus[j][c] -= eps;
                let fd = (sampling_entropy(&plus, sigma) - sampling_entropy(&minus, sigma)) / (2.0 * eps);
                assert!((fd - grad[j][c]).abs() < 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn spread_configuration_scores_lower() {
        let t = 1.0 / 3f64.sqrt();
        let tetra = vec![Vec3::new(t, t, t), Vec3::new(t, -t, -t), Vec3::new(-t, t, -t), Vec3::new(-t, -t, t)];
        let cap: Vec<Vec3> = (0..4)
            .map(|i| {
                let phi = std::f64::consts::FRAC_PI_2 * i as f64;
                Vec3::new(0.3 * phi.cos(), 0.3 * phi.sin(), (1.0 - 0.09f64).sqrt())
            })
            .collect();
        let sigma = (4.0 * std::f64::consts::PI / 4.0).sqrt();
        assert!(sampling_entropy(&tetra, sigma) < sampling_entropy(&cap, sigma));
    }

    #[test]
    fn separating_two_particles_lowers_the_term() {
        let mut last = f64::INFINITY;
        for d in [0.0, 0.5, 1.0, 4.0, 16.0] {
            let s = sampling_entropy(&[Vec3::zeros(), Vec3::new(d, 0.0, 0.0)], 1.0);
            assert!(s < last && s.is_finite());
            last = s;
        }
    }

    #[test]
    fn order_does_not_matter() {
        let pts = random_shapes(1, 6, 6).remove(0);
        let mut rev = pts.clone();
        rev.reverse();
        assert!((sampling_entropy(&pts, 0.5) - sampling_entropy(&rev, 0.5)).abs() < 1e-12);
    }
}
