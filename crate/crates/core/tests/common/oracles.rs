//! Independent reference computations used by the integration and
//! acceptance tests. None of these call into the library.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Two-tailed Student-t tail probability. With s = √ν tan θ the density
/// becomes proportional to cos^(ν-1) θ on (-π/2, π/2), so both the tail
/// and the normaliser are smooth finite-interval integrals.
pub fn student_t_two_tailed(t: f64, df: usize) -> f64 {
    let nu = df as f64;
    let g = |th: f64| th.cos().powf(nu - 1.0);
    let th0 = (t.abs() / nu.sqrt()).atan();
    let n = 200_000;
    let tail = simpson(g, th0, PI / 2.0, n);
    let half = simpson(g, 0.0, PI / 2.0, n);
    tail / half
}

/// t statistic and two-tailed p of a paired test, computed directly.
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let ss: f64 = d.iter().map(|x| (x - mean) * (x - mean)).sum();
    let t = mean / (ss / (n - 1.0) / n).sqrt();
    (t, student_t_two_tailed(t, a.len() - 1))
}

/// Perimeter of an ellipse with semi-axes a, b by quadrature.
pub fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    simpson(|t| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt(), 0.0, 2.0 * PI, 20_000)
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 0 { 1.0 } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Largest deviation from the identity of the Gram matrix of the
/// functions `ylm(l, m, θ, φ) -> (re, im)` for l ≤ l_max, under
/// Gauss–Legendre in cos θ times the trapezoid rule in φ (both exact for
/// these band-limited products).
pub fn ylm_orthonormality_error(l_max: usize, ylm: impl Fn(usize, i64, f64, f64) -> (f64, f64)) -> f64 {
    let rule = gauss_legendre(2 * l_max + 2);
    let n_phi = 4 * l_max + 4;
    let index: Vec<(usize, i64)> = (0..=l_max).flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m))).collect();
    let k = index.len();
    let mut gram = vec![(0.0, 0.0); k * k];
    for &(x, w) in &rule {
        let theta = x.acos();
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            let weight = w * 2.0 * PI / n_phi as f64;
            let values: Vec<(f64, f64)> = index.iter().map(|&(l, m)| ylm(l, m, theta, phi)).collect();
            for a in 0..k {
                for b in 0..k {
                    let (ar, ai) = values[a];
                    let (br, bi) = values[b];
                    let g = &mut gram[a * k + b];
                    g.0 += weight * (ar * br + ai * bi);
                    g.1 += weight * (ai * br - ar * bi);
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            let (re, im) = gram[a * k + b];
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((re - target).hypot(im));
        }
    }
    worst
}

/// Varifold inner product as a literal double sum over faces of
/// area · area · Gaussian · (unit normal · unit normal)².
pub fn varifold_inner_brute(
    va: &[[f64; 3]],
    fa: &[[usize; 3]],
    vb: &[[f64; 3]],
    fb: &[[usize; 3]],
    sigma: f64,
) -> f64 {
    let atoms = |v: &[[f64; 3]], f: &[[usize; 3]]| -> Vec<([f64; 3], f64, [f64; 3])> {
        f.iter()
            .map(|&[i, j, k]| {
                let (p, q, r) = (v[i], v[j], v[k]);
                let c = [0, 1, 2].map(|d| (p[d] + q[d] + r[d]) / 3.0);
                let e1 = [0, 1, 2].map(|d| q[d] - p[d]);
                let e2 = [0, 1, 2].map(|d| r[d] - p[d]);
                let x = [
                    e1[1] * e2[2] - e1[2] * e2[1],
                    e1[2] * e2[0] - e1[0] * e2[2],
                    e1[0] * e2[1] - e1[1] * e2[0],
                ];
                let len = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                (c, 0.5 * len, x.map(|t| t / len))
            })
            .collect()
    };
    let (a, b) = (atoms(va, fa), atoms(vb, fb));
    let mut total = 0.0;
    for (ca, aa, na) in &a {
        for (cb, ab, nb) in &b {
            let r2: f64 = (0..3).map(|d| (ca[d] - cb[d]).powi(2)).sum();
            let dot: f64 = (0..3).map(|d| na[d] * nb[d]).sum();
            total += aa * ab * (-r2 / (sigma * sigma)).exp() * dot * dot;
        }
    }
    total
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// ‖a − b‖ / max(‖b‖, tiny).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

/// Deterministic pseudo-random numbers in [0, 1) (SplitMix64), so
/// fixtures do not depend on the library's RNG.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn cauchy_tail_is_exact() {
        // df = 1: p = 1 - 2 atan(t)/π
        for t in [0.3, 1.0, 4.0] {
            let exact = 1.0 - 2.0 * f64::atan(t) / PI;
            assert!((student_t_two_tailed(t, 1) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn df_two_tail_is_exact() {
        // df = 2: p = 1 - t / sqrt(2 + t²)
        for t in [0.1f64, 1.7, 9.0] {
            let exact = 1.0 - t / (2.0 + t * t).sqrt();
            assert!((student_t_two_tailed(t, 2) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(8);
        let s: f64 = rule.iter().map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn circle_perimeter() {
        assert!((ellipse_perimeter(2.0, 2.0) - 4.0 * PI).abs() < 1e-12);
    }
}
