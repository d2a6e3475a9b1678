use std::path::Path;

use proptest::prelude::*;
use shapebench::geometry::*;
use shapebench::Vec3;

fn vec3(scale: f64) -> impl Strategy<Value = Vec3> {
    (-scale..scale, -scale..scale, -scale..scale).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn assert_rigid(xf: &RigidTransform) {
    let r = xf.rotation;
    let err = (r.transpose() * r - nalgebra::Matrix3::identity()).abs().max();
    assert!(err < 1e-9, "RᵀR − I = {err:e}");
    assert!((r.determinant() - 1.0).abs() < 1e-9);
}

/// Mean distance from the vertices of `a` to the surface of `b`, both ways.
fn symmetric_mean_distance(a: &TriangleMesh, b: &TriangleMesh) -> f64 {
    let one_way = |x: &TriangleMesh, y: &TriangleMesh| {
        let bvh = TriangleBvh::new(y);
        x.vertices().iter().map(|p| bvh.distance(p)).sum::<f64>() / x.vertices().len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn axis_angle_transforms_are_rigid(axis in vec3(1.0), angle in -10.0..10.0f64, t in vec3(50.0)) {
        prop_assume!(axis.norm() > 1e-6);
        let xf = RigidTransform::from_axis_angle(axis, angle, t);
        assert_rigid(&xf);
        assert_rigid(&xf.inverse());
        assert_rigid(&xf.compose(&xf));
    }

    #[test]
    fn best_fit_is_rigid_and_exact(points in prop::collection::vec(vec3(5.0), 4..30), axis in vec3(1.0),
                                   angle in -3.0..3.0f64, t in vec3(10.0)) {
        prop_assume!(axis.norm() > 1e-3);
        let truth = RigidTransform::from_axis_angle(axis, angle, t);
        let moved: Vec<Vec3> = points.iter().map(|p| truth.apply(p)).collect();
        let (xf, rms) = best_rigid_fit(&points, &moved).unwrap();
        assert_rigid(&xf);
        // the fit is only unique for non-degenerate clouds; the residual is always exact
        prop_assert!(rms < 1e-9, "{}", rms);
    }

    #[test]
    fn best_fit_of_unrelated_clouds_is_rigid(a in prop::collection::vec(vec3(5.0), 6), b in prop::collection::vec(vec3(5.0), 6)) {
        let (xf, _) = best_rigid_fit(&a, &b).unwrap();
        assert_rigid(&xf);
    }

    #[test]
    fn projection_is_idempotent(p in vec3(2.0)) {
        let sdf = ellipsoid_sdf();
        let q = project_to_surface(&p, &sdf).unwrap();
        let r = project_to_surface(&q, &sdf).unwrap();
        prop_assert!((q - r).norm() < 1e-6, "{}", (q - r).norm());
        prop_assert!(sdf.sample(&q).unwrap().abs() <= 1e-3 * sdf.spacing());
    }
}

fn ellipsoid_sdf() -> SignedDistanceVolume {
    use std::sync::OnceLock;
    static SDF: OnceLock<SignedDistanceVolume> = OnceLock::new();
    SDF.get_or_init(|| {
        let mesh = TriangleMesh::ellipsoid(3, Vec3::new(1.5, 1.0, 0.8), Vec3::zeros());
        mesh_to_sdf(&mesh, 0.1, 0.5).unwrap()
    })
    .clone()
}

#[test]
fn distance_values_are_bounded_and_signed() {
    let mesh = TriangleMesh::ellipsoid(3, Vec3::new(1.5, 1.0, 0.8), Vec3::zeros());
    let sdf = ellipsoid_sdf();
    let diameter = sdf.diameter();
    let [nx, ny, nz] = sdf.dims();
    for k in (0..nz).step_by(3) {
        for j in (0..ny).step_by(3) {
            for i in (0..nx).step_by(3) {
                let v = sdf.at(i, j, k);
                assert!(v.abs() <= diameter);
                let inside = mesh.winding_number(&sdf.position(i, j, k)) > 0.5;
                if v.abs() > sdf.spacing() {
                    assert_eq!(inside, v < 0.0, "voxel {i},{j},{k}");
                }
            }
        }
    }
}

#[test]
fn marching_recovers_the_input_surface() {
    for mesh in [
        TriangleMesh::ellipsoid(3, Vec3::new(1.5, 1.0, 0.8), Vec3::new(0.3, -0.2, 0.1)),
        TriangleMesh::torus(1.2, 0.45, 48, 24),
        TriangleMesh::cuboid(Vec3::new(-1.0, -0.5, -0.7), Vec3::new(1.0, 0.5, 0.7)),
    ] {
        let h = 0.08;
        let sdf = mesh_to_sdf(&mesh, h, 3.0 * h).unwrap();
        let surface = polygonize(&sdf).unwrap();
        surface.check_watertight().unwrap();
        assert_eq!(surface.euler_characteristic(), mesh.euler_characteristic());
        let d = symmetric_mean_distance(&surface, &mesh);
        assert!(d < h, "mean distance {d} ≥ spacing {h}");
    }
}

#[test]
fn smoothing_keeps_topology() {
    for (mesh, chi) in [
        (TriangleMesh::ellipsoid(3, Vec3::new(1.5, 1.0, 0.6), Vec3::zeros()), 2),
        (TriangleMesh::torus(1.0, 0.3, 48, 24), 0),
    ] {
        let sdf = mesh_to_sdf(&mesh, 0.07, 0.3).unwrap();
        for iterations in [1, 5, 20] {
            let smooth = smooth_sdf(&sdf, iterations);
            assert_eq!(smooth.dims(), sdf.dims());
            assert_eq!(polygonize(&smooth).unwrap().euler_characteristic(), chi, "{iterations} iterations");
        }
    }
}

#[test]
fn cropping_gives_shared_grid() {
    let a = mesh_to_sdf(&TriangleMesh::icosphere(2, 1.0, Vec3::zeros()), 0.1, 0.3).unwrap();
    let b = mesh_to_sdf(&TriangleMesh::icosphere(2, 1.3, Vec3::new(0.4, 0.0, 0.0)), 0.1, 0.3).unwrap();
    let cropped = crop_to_common_box(&[a, b], &["a".into(), "b".into()], 0.2).unwrap();
    assert_eq!(cropped[0].dims(), cropped[1].dims());
    assert_eq!(cropped[0].origin(), cropped[1].origin());
}

#[test]
fn obj_round_trip_and_line_endings() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = TriangleMesh::ellipsoid(2, Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, 0.0, -1.0));
    let path = dir.path().join("e.obj");
    mesh.write_obj(&path).unwrap();
    let back = TriangleMesh::read_obj(&path).unwrap();
    assert_eq!(back.faces(), mesh.faces());
    assert_eq!(back.vertices(), mesh.vertices());
    let crlf = "v 0 0 0\r\nv 1 0 0\r\nv 0 1 0\r\nv 0 0 1\r\nf 1 3 2\r\nf 1 2 4\r\nf 2 3 4\r\nf 1 4 3\r\n";
    let tet = TriangleMesh::parse_obj(crlf, Path::new("tet.obj")).unwrap();
    tet.check_watertight().unwrap();
    assert!(tet.volume() > 0.0);
}

#[test]
fn volume_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sdf = ellipsoid_sdf();
    let path = dir.path().join("e.raw");
    sdf.save(&path).unwrap();
    let back = SignedDistanceVolume::load(&path).unwrap();
    assert_eq!(back.dims(), sdf.dims());
    for (a, b) in back.values().iter().zip(sdf.values()) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn registration_output_is_rigid() {
    let a = TriangleMesh::ellipsoid(2, Vec3::new(2.0, 1.2, 0.8), Vec3::zeros());
    let truth = RigidTransform::from_axis_angle(Vec3::new(0.2, 1.0, 0.1), 0.3, Vec3::new(0.5, -0.2, 0.1));
    let r = rigid_register(&a.transformed(&truth), &a).unwrap();
    assert_rigid(&r.transform);
    assert!(r.converged);
    assert!(r.transform.compose(&truth).angle() < 1e-3);
}
