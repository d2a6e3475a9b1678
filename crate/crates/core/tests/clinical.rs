mod common;

use std::f64::consts::PI;

use common::oracles::{ellipse_perimeter, paired_t, SplitMix};
use nalgebra::{DMatrix, Matrix3, Rotation3};
use proptest::prelude::*;
use shapebench::clinical::*;
use shapebench::geometry::RigidTransform;
use shapebench::Vec3;

fn vec3() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn landmarks(m: usize, seed: u64) -> Vec<Vec3> {
    // jittered grid keeps the set well spread and non-coplanar
    let mut rng = SplitMix(seed);
    (0..m)
        .map(|i| {
            let base = Vec3::new((i % 3) as f64, ((i / 3) % 3) as f64, (i / 9) as f64);
            base + Vec3::new(rng.range(-0.3, 0.3), rng.range(-0.3, 0.3), rng.range(-0.3, 0.3))
        })
        .collect()
}

fn ellipse_ring(a: f64, b: f64, n: usize, xf: &RigidTransform) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            xf.apply(&Vec3::new(a * t.cos(), b * t.sin(), 0.0))
        })
        .collect()
}

fn measurements(f: &EllipseFit) -> [f64; 4] {
    [f.max_diameter, f.min_diameter, f.area, f.circumference]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tps_interpolates_its_landmarks(m in 5usize..20, seed in any::<u64>(), disp in prop::collection::vec(vec3(), 20)) {
        let src = landmarks(m, seed);
        let dst: Vec<Vec3> = src.iter().zip(&disp).map(|(p, d)| p + 0.3 * d).collect();
        let warped = tps_warp(&src, &dst, &src).unwrap();
        for (w, d) in warped.iter().zip(&dst) {
            prop_assert!((w - d).norm() < 1e-9, "{}", (w - d).norm());
        }
    }

    #[test]
    fn tps_reproduces_affine_maps(m in 5usize..20, seed in any::<u64>(), axis in vec3(), angle in -1.0..1.0f64,
                                  shear in -0.3..0.3f64, t in vec3(), query in vec3()) {
        let src = landmarks(m, seed);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis + Vec3::new(0.0, 0.0, 1e-3)), angle);
        let a = rot.matrix() * Matrix3::new(1.0, shear, 0.0, 0.0, 1.0 + shear, 0.0, shear, 0.0, 1.0);
        let dst: Vec<Vec3> = src.iter().map(|p| a * p + t).collect();
        let tps = ThinPlateSpline::fit(&src, &dst).unwrap();
        prop_assert!(tps.weights().iter().all(|w| w.norm() < 1e-9));
        prop_assert!((tps.apply(&query) - (a * query + t)).norm() < 1e-9);
    }

    #[test]
    fn ellipse_is_invariant_to_motion_and_ordering(a in 1.0..8.0f64, ratio in 0.3..1.0f64, n in 12usize..80,
                                                   axis in vec3(), angle in -3.0..3.0f64, t in vec3(), shift in 0usize..80) {
        let b = a * ratio;
        let base = fit_ellipse(&Contour::closed(ellipse_ring(a, b, n, &RigidTransform::identity()))).unwrap();
        let xf = RigidTransform::from_axis_angle(axis + Vec3::new(1e-3, 0.0, 0.0), angle, 10.0 * t);
        let mut moved = ellipse_ring(a, b, n, &xf);
        moved.rotate_left(shift % n);
        let forward = fit_ellipse(&Contour::closed(moved.clone())).unwrap();
        moved.reverse();
        let backward = fit_ellipse(&Contour::closed(moved)).unwrap();
        for fit in [&forward, &backward] {
            for (x, y) in measurements(fit).iter().zip(measurements(&base)) {
                prop_assert!((x - y).abs() <= 1e-6 * y, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn ellipse_record_is_self_consistent(a in 1.0..8.0f64, ratio in 0.2..1.0f64, n in 12usize..80) {
        let b = a * ratio;
        let fit = fit_ellipse(&Contour::closed(ellipse_ring(a, b, n, &RigidTransform::identity()))).unwrap();
        let bound = PI * (fit.max_diameter / 2.0) * (fit.min_diameter / 2.0);
        prop_assert!(fit.max_diameter >= fit.min_diameter && fit.min_diameter > 0.0);
        prop_assert!(fit.area <= bound * (1.0 + 1e-9));
        prop_assert!((fit.area - bound).abs() <= 1e-9 * bound);
        prop_assert!((fit.max_diameter - 2.0 * a).abs() < 1e-6 * a);
        prop_assert!((fit.min_diameter - 2.0 * b).abs() < 1e-6 * a);
    }

    #[test]
    fn plane_angle_is_within_range(n1 in vec3(), n2 in vec3()) {
        prop_assume!(n1.norm() > 1e-3 && n2.norm() > 1e-3);
        let angle = plane_angle(&n1, &n2).unwrap();
        prop_assert!((0.0..=90.0).contains(&angle));
        prop_assert!((plane_angle(&n1, &-n2).unwrap() - angle).abs() < 1e-9);
    }

    #[test]
    fn ari_ignores_label_names(labels in prop::collection::vec(0usize..4, 8..40), perm in Just([2usize, 0, 3, 1])) {
        let renamed: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        prop_assert!((adjusted_rand_index(&labels, &renamed) - 1.0).abs() < 1e-12
            || labels.iter().all(|&l| l == labels[0]));
    }

    #[test]
    fn ari_is_symmetric(a in prop::collection::vec(0usize..4, 20), b in prop::collection::vec(0usize..4, 20)) {
        prop_assert!((adjusted_rand_index(&a, &b) - adjusted_rand_index(&b, &a)).abs() < 1e-12);
    }
}

#[test]
fn ramanujan_matches_quadrature() {
    for (a, b, tol) in [(1.0, 1.0, 1e-12), (3.0, 2.0, 1e-11), (2.0, 1.0, 1e-9), (4.0, 1.0, 1e-6), (5.0, 1.0, 1e-6)] {
        let exact = ellipse_perimeter(a, b);
        let rel = (ramanujan_circumference(a, b) - exact).abs() / exact;
        assert!(rel < tol, "{a} {b}: {rel:e}");
    }
}

#[test]
fn fitted_circumference_matches_quadrature() {
    let fit = fit_ellipse(&Contour::closed(ellipse_ring(6.0, 4.0, 64, &RigidTransform::identity()))).unwrap();
    assert!((fit.circumference - ellipse_perimeter(6.0, 4.0)).abs() < 1e-6);
}

#[test]
fn ttest_matches_quadrature_oracle() {
    let mut rng = SplitMix(2024);
    for fixture in 0..20 {
        let n = 3 + fixture;
        let shift = rng.range(-0.6, 0.6);
        let a: Vec<f64> = (0..n).map(|_| rng.range(0.0, 10.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + shift + rng.range(-1.0, 1.0)).collect();
        let (t, p) = paired_t(&a, &b);
        let got = paired_ttest(&a, &b).unwrap();
        assert_eq!(got.df, n - 1);
        assert!((got.t - t).abs() <= 1e-9 * t.abs().max(1.0), "fixture {fixture}: t {} vs {t}", got.t);
        assert!((got.p - p).abs() <= 1e-6, "fixture {fixture}: p {} vs {p}", got.p);
    }
}

#[test]
fn kmeans_labels_cover_every_sample() {
    let mut rng = SplitMix(5);
    let features = DMatrix::from_fn(30, 3, |i, _| (i % 4) as f64 * 5.0 + rng.range(-0.5, 0.5));
    let a = kmeans(&features, 4, 3, 5).unwrap();
    assert_eq!(a.labels.len(), 30);
    assert_eq!(a.k(), 4);
    let truth: Vec<usize> = (0..30).map(|i| i % 4).collect();
    assert!((adjusted_rand_index(&a.labels, &truth) - 1.0).abs() < 1e-12);
    assert_eq!(kmeans(&features, 4, 3, 5).unwrap().labels, a.labels);
}
