mod common;

use common::oracles::SplitMix;
use nalgebra::DVector;
use proptest::prelude::*;
use shapebench::geometry::RigidTransform;
use shapebench::metrics::*;
use shapebench::shapestats::*;
use shapebench::Vec3;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn noisy_model(n: usize, m: usize, seed: u64) -> CorrespondenceModel {
    let mut rng = SplitMix(seed);
    let base: Vec<Vec3> = (0..m).map(|_| Vec3::new(rng.range(-3.0, 3.0), rng.range(-2.0, 2.0), rng.range(-1.0, 1.0))).collect();
    let rows = (0..n)
        .map(|_| base.iter().map(|p| p + 0.2 * Vec3::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0))).collect())
        .collect();
    CorrespondenceModel::new("noisy", ids(n), rows).unwrap()
}

/// Random displacement of the points in `group`, with the six
/// infinitesimal rigid motions projected out.
fn nonrigid_mode(base: &[Vec3], group: &[usize], rng: &mut SplitMix) -> Vec<Vec3> {
    let dm = 3 * base.len();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for axis in 0..3 {
        let e = Vec3::from_fn(|i, _| if i == axis { 1.0 } else { 0.0 });
        let mut t = DVector::zeros(dm);
        let mut r = DVector::zeros(dm);
        for &i in group {
            t.fixed_rows_mut::<3>(3 * i).copy_from(&e);
            r.fixed_rows_mut::<3>(3 * i).copy_from(&e.cross(&base[i]));
        }
        basis.push(t);
        basis.push(r);
    }
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    for mut b in basis {
        for o in &ortho {
            b -= o * o.dot(&b);
        }
        if b.norm() > 1e-12 {
            ortho.push(b.normalize());
        }
    }
    let mut v = DVector::zeros(dm);
    for &i in group {
        for c in 0..3 {
            v[3 * i + c] = rng.range(-1.0, 1.0);
        }
    }
    for o in &ortho {
        v -= o * o.dot(&v);
    }
    (0..base.len()).map(|i| Vec3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])).collect()
}

/// Noiseless shapes spanned by `r` non-rigid modes on disjoint point groups.
fn r_mode_model(n: usize, r: usize, seed: u64) -> CorrespondenceModel {
    let mut rng = SplitMix(seed);
    let m = 8 * r;
    let base: Vec<Vec3> = (0..m).map(|_| Vec3::new(rng.range(-3.0, 3.0), rng.range(-3.0, 3.0), rng.range(-3.0, 3.0))).collect();
    let modes: Vec<Vec<Vec3>> = (0..r)
        .map(|k| nonrigid_mode(&base, &(8 * k..8 * k + 8).collect::<Vec<_>>(), &mut rng))
        .collect();
    let rows = (0..n)
        .map(|_| {
            let coeffs: Vec<f64> = (0..r).map(|_| rng.range(-1.0, 1.0)).collect();
            (0..m).map(|i| base[i] + (0..r).map(|k| coeffs[k] * modes[k][i]).sum::<Vec3>()).collect()
        })
        .collect();
    CorrespondenceModel::new("modes", ids(n), rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn compactness_is_monotone_and_reaches_one(seed in any::<u64>(), n in 3usize..10) {
        let model = noisy_model(n, 10, seed);
        let pdm = build_pdm(&procrustes_align(&model).unwrap().model).unwrap();
        let values: Vec<f64> = (0..=pdm.num_modes()).map(|k| compactness(&pdm, k)).collect();
        prop_assert!(values.iter().all(|c| (0.0..=1.0).contains(c)));
        prop_assert!(values.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((values[pdm.num_modes()] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn specificity_ignores_training_order(seed in any::<u64>(), n in 3usize..8, rot in 1usize..7) {
        let model = noisy_model(n, 8, seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left(rot % n);
        order.swap(0, n - 1);
        let shuffled = model.select(&order).unwrap();
        let a = procrustes_align(&model).unwrap().model;
        let b = procrustes_align(&shuffled).unwrap().model;
        let (pa, pb) = (build_pdm(&a).unwrap(), build_pdm(&b).unwrap());
        for k in 1..=pa.num_modes().min(3) {
            let sa = specificity(&pa, &a, k, 200, 5).unwrap().mean;
            let sb = specificity(&pb, &b, k, 200, 5).unwrap().mean;
            prop_assert!((sa - sb).abs() <= 1e-8 * sa.max(1e-12), "k={} {} vs {}", k, sa, sb);
        }
    }

    #[test]
    fn metrics_are_rigid_invariant(seed in any::<u64>(), angle in -3.0..3.0f64, t in -20.0..20.0f64) {
        let model = noisy_model(6, 10, seed);
        let xf = RigidTransform::from_axis_angle(Vec3::new(0.3, -0.4, 1.0), angle, Vec3::new(t, 1.0, -t));
        let (_, a) = evaluate_model(&model, 4, 200, 3).unwrap();
        let (_, b) = evaluate_model(&model.transformed(&xf), 4, 200, 3).unwrap();
        for (x, y) in [(&a.compactness, &b.compactness), (&a.generalization, &b.generalization), (&a.specificity, &b.specificity)] {
            for (u, v) in x.iter().zip(y.iter()) {
                prop_assert!(*u >= 0.0);
                prop_assert!((u - v).abs() <= 1e-8 * u.abs().max(1e-9), "{} vs {}", u, v);
            }
        }
    }
}

#[test]
fn generalization_vanishes_at_the_true_rank() {
    for r in 1..=3 {
        let model = r_mode_model(10, r, 40 + r as u64);
        let g = generalization(&procrustes_align(&model).unwrap().model, r).unwrap();
        assert!(g < 1e-6, "rank {r}: {g:e}");
        if r > 1 {
            let under = generalization(&procrustes_align(&model).unwrap().model, r - 1).unwrap();
            assert!(under > 1e-3);
        }
    }
}

#[test]
fn curves_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (_, curves) = evaluate_model(&noisy_model(6, 10, 1), 3, 100, 1).unwrap();
    let path = dir.path().join("metrics.csv");
    curves.write_csv(&path).unwrap();
    let back = MetricCurves::read_csv("noisy", &path).unwrap();
    assert_eq!(back, curves);
}

#[test]
fn identical_shapes_give_zero_errors() {
    let base = noisy_model(1, 12, 2);
    let rows = vec![base.shape(0).to_vec(); 5];
    let same = CorrespondenceModel::new("same", ids(5), rows).unwrap();
    let aligned = procrustes_align(&same).unwrap().model;
    let pdm = build_pdm(&aligned).unwrap();
    assert!(pdm.eigenvalues.iter().all(|&l| l.abs() < 1e-20));
    assert!(generalization(&aligned, 1).unwrap() < 1e-12);
    assert!(specificity(&pdm, &aligned, 1, 50, 0).unwrap().mean < 1e-12);
}
