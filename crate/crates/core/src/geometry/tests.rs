use approx::assert_abs_diff_eq;
use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::*;

fn toy_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 101).unwrap()
}

#[test]
fn principal_point_backprojects_to_optical_axis() {
    let k = toy_intrinsics();
    let mut depth = Array2::<f64>::zeros((101, 200));
    depth[[50, 50]] = 2.0;
    let pm = depth_to_pointmap(&depth, &k).unwrap();
    assert_eq!(pm.frame, Frame::Camera);
    assert!(pm.valid[[50, 50]]);
    assert_abs_diff_eq!(pm.points[[50, 50, 0]], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(pm.points[[50, 50, 1]], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(pm.points[[50, 50, 2]], 2.0, epsilon = 1e-15);
}

#[test]
fn off_axis_pixel_matches_projection_oracle() {
    // Independent per-pixel oracle: x = (u - cx)/fx * depth.
    let k = toy_intrinsics();
    let mut depth = Array2::<f64>::zeros((101, 200));
    depth[[50, 150]] = 1.0;
    let pm = depth_to_pointmap(&depth, &k).unwrap();
    assert_abs_diff_eq!(pm.points[[50, 150, 0]], (150.0 - 50.0) / 100.0 * 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(pm.points[[50, 150, 1]], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(pm.points[[50, 150, 2]], 1.0, epsilon = 1e-15);
}

#[test]
fn zero_depth_is_all_invalid() {
    let k = toy_intrinsics();
    let depth = Array2::<f64>::zeros((101, 200));
    let pm = depth_to_pointmap(&depth, &k).unwrap();
    assert!(pm.valid.iter().all(|&v| !v));
    assert!(pm.points.iter().all(|&p| p == 0.0));
}

#[test]
fn depth_dimension_mismatch_rejected() {
    let k = toy_intrinsics();
    let depth = Array2::<f64>::zeros((10, 10));
    assert!(matches!(
        depth_to_pointmap(&depth, &k),
        Err(GeometryError::DimensionMismatch { .. })
    ));
}

#[test]
fn reprojection_returns_pixel_coordinates() {
    let k = CameraIntrinsics::new(80.0, 90.0, 16.0, 15.0, 32, 32).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let mut depth = Array2::<f64>::zeros((32, 32));
    for v in depth.iter_mut() {
        *v = rng.random_range(0.5..10.0);
    }
    let pm = depth_to_pointmap(&depth, &k).unwrap();
    for v in 0..32 {
        for u in 0..32 {
            let p = Vector3::new(
                pm.points[[v, u, 0]],
                pm.points[[v, u, 1]],
                pm.points[[v, u, 2]],
            );
            let (pu, pv) = k.project(p).unwrap();
            assert_abs_diff_eq!(pu, u as f64, epsilon = 1e-9);
            assert_abs_diff_eq!(pv, v as f64, epsilon = 1e-9);
        }
    }
}

fn single_point_map(p: [f64; 3]) -> Pointmap {
    let mut points = ndarray::Array3::<f64>::zeros((1, 1, 3));
    points[[0, 0, 0]] = p[0];
    points[[0, 0, 1]] = p[1];
    points[[0, 0, 2]] = p[2];
    Pointmap {
        points,
        frame: Frame::Camera,
        valid: Array2::from_elem((1, 1), true),
    }
}

#[test]
fn transform_identity_is_noop() {
    let pm = single_point_map([0.3, -0.7, 2.0]);
    let out = transform_pointmap(&pm, &Pose::identity()).unwrap();
    assert_eq!(out.frame, Frame::World);
    assert_eq!(out.points, pm.points);
}

#[test]
fn transform_pure_translation() {
    let pm = single_point_map([0.0, 0.0, 1.0]);
    let pose = Pose::new([1.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0]).unwrap();
    let out = transform_pointmap(&pm, &pose).unwrap();
    assert_abs_diff_eq!(out.points[[0, 0, 0]], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(out.points[[0, 0, 1]], 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(out.points[[0, 0, 2]], 4.0, epsilon = 1e-15);
}

#[test]
fn transform_rotation_matches_quaternion_matrix_oracle() {
    // 90 degrees about z: quaternion (cos45, 0, 0, sin45).
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let pose = Pose::new([h, 0.0, 0.0, h], [0.0; 3]).unwrap();
    let pm = single_point_map([1.0, 0.0, 0.0]);
    let out = transform_pointmap(&pm, &pose).unwrap();
    assert_abs_diff_eq!(out.points[[0, 0, 0]], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out.points[[0, 0, 1]], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out.points[[0, 0, 2]], 0.0, epsilon = 1e-12);
    // Against the rotation-matrix route.
    let r = pose.rotation_matrix();
    let p = r * Vector3::new(1.0, 0.0, 0.0);
    assert_abs_diff_eq!((p - Vector3::new(0.0, 1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
}

#[test]
fn transform_rejects_world_frame_input() {
    let mut pm = single_point_map([1.0, 0.0, 0.0]);
    pm.frame = Frame::World;
    assert!(matches!(
        transform_pointmap(&pm, &Pose::identity()),
        Err(GeometryError::WrongFrame { .. })
    ));
}

#[test]
fn transform_preserves_pairwise_distances() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let mut points = ndarray::Array3::<f64>::zeros((2, 3, 3));
    for v in points.iter_mut() {
        *v = rng.random_range(-5.0..5.0);
    }
    let pm = Pointmap {
        points,
        frame: Frame::Camera,
        valid: Array2::from_elem((2, 3), true),
    };
    let pose = Pose::look_at(
        Vector3::new(1.0, 2.0, 3.0),
        Vector3::new(-1.0, 0.0, 0.5),
        Vector3::new(0.0, 1.0, 0.0),
    );
    let out = transform_pointmap(&pm, &pose).unwrap();
    let at = |m: &Pointmap, v: usize, u: usize| {
        Vector3::new(m.points[[v, u, 0]], m.points[[v, u, 1]], m.points[[v, u, 2]])
    };
    for a in 0..6 {
        for b in 0..6 {
            let (av, au, bv, bu) = (a / 3, a % 3, b / 3, b % 3);
            let din = (at(&pm, av, au) - at(&pm, bv, bu)).norm();
            let dout = (at(&out, av, au) - at(&out, bv, bu)).norm();
            assert_abs_diff_eq!(din, dout, epsilon = 1e-12);
        }
    }
}

#[test]
fn raymap_principal_ray_and_origins() {
    let k = CameraIntrinsics::new(100.0, 100.0, 16.0, 16.0, 32, 32).unwrap();
    let rm = camera_to_raymap(&k, &Pose::identity());
    assert_abs_diff_eq!(rm.directions[[16, 16, 0]], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(rm.directions[[16, 16, 1]], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(rm.directions[[16, 16, 2]], 1.0, epsilon = 1e-15);
    assert!(rm.origins.iter().all(|&o| o == 0.0));

    let moved = Pose::new([1.0, 0.0, 0.0, 0.0], [5.0, 0.0, 0.0]).unwrap();
    let rm = camera_to_raymap(&k, &moved);
    for v in 0..32 {
        for u in 0..32 {
            assert_eq!(rm.origins[[v, u, 0]], 5.0);
            assert_eq!(rm.origins[[v, u, 1]], 0.0);
            assert_eq!(rm.origins[[v, u, 2]], 0.0);
        }
    }
}

#[test]
fn raymap_off_axis_direction_matches_normalize_oracle() {
    let k = CameraIntrinsics::new(100.0, 100.0, 60.0, 60.0, 200, 200).unwrap();
    let rm = camera_to_raymap(&k, &Pose::identity());
    // Pixel (cx + 100, cy): unnormalized ray (1, 0, 1).
    let d = Vector3::new(
        rm.directions[[60, 160, 0]],
        rm.directions[[60, 160, 1]],
        rm.directions[[60, 160, 2]],
    );
    let expect = Vector3::new(1.0, 0.0, 1.0).normalize();
    assert_abs_diff_eq!((d - expect).norm(), 0.0, epsilon = 1e-4);
    assert_abs_diff_eq!(d.x, 0.7071, epsilon = 1e-4);
    assert_abs_diff_eq!(d.z, 0.7071, epsilon = 1e-4);
}

#[test]
fn raymap_camera_round_trip_identity() {
    let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap();
    let rm = camera_to_raymap(&k, &Pose::identity());
    let (k2, pose2) = raymap_to_camera(&rm).unwrap();
    assert_abs_diff_eq!(k2.fx, k.fx, epsilon = 1e-6);
    assert_abs_diff_eq!(k2.fy, k.fy, epsilon = 1e-6);
    assert_abs_diff_eq!(k2.cx, k.cx, epsilon = 1e-6);
    assert_abs_diff_eq!(k2.cy, k.cy, epsilon = 1e-6);
    assert!(pose2.rotation_angle_to(&Pose::identity()) < 1e-6);
    assert!(pose2.translation().norm() < 1e-9);
}

#[test]
fn raymap_round_trip_rotated_camera() {
    let k = CameraIntrinsics::new(90.0, 110.0, 30.0, 34.0, 64, 64).unwrap();
    // 90 degrees about y.
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let pose = Pose::new([h, 0.0, h, 0.0], [1.0, -2.0, 0.5]).unwrap();
    let rm = camera_to_raymap(&k, &pose);
    let (k2, pose2) = raymap_to_camera(&rm).unwrap();
    assert!(pose2.rotation_angle_to(&pose) < 1e-6, "rotation error {} deg", pose2.rotation_angle_to(&pose));
    assert_abs_diff_eq!(k2.fx, k.fx, epsilon = 1e-6);
    assert_abs_diff_eq!(k2.fy, k.fy, epsilon = 1e-6);
}

#[test]
fn raymap_round_trip_random_cameras_tight() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    for _ in 0..10 {
        let w = 32 + 8 * rng.random_range(0..3usize);
        let h = 32 + 8 * rng.random_range(0..3usize);
        let k = CameraIntrinsics::new(
            rng.random_range(20.0..200.0),
            rng.random_range(20.0..200.0),
            w as f64 * rng.random_range(0.3..0.7),
            h as f64 * rng.random_range(0.3..0.7),
            w,
            h,
        )
        .unwrap();
        let eye = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(0.2..5.0),
            rng.random_range(-5.0..5.0),
        );
        let target = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let pose = Pose::look_at(eye, target, Vector3::new(0.0, 1.0, 0.0));
        let rm = camera_to_raymap(&k, &pose);
        let (k2, pose2) = raymap_to_camera(&rm).unwrap();
        assert!((k2.fx - k.fx).abs() / k.fx < 1e-9, "fx {} vs {}", k2.fx, k.fx);
        assert!((k2.fy - k.fy).abs() / k.fy < 1e-9);
        assert!((k2.cx - k.cx).abs() / k.cx < 1e-9);
        assert!((k2.cy - k.cy).abs() / k.cy < 1e-9);
        assert!(pose2.rotation_angle_to(&pose) < 1e-6);
        assert!((pose2.translation() - pose.translation()).norm() < 1e-9);
    }
}

#[test]
fn raymap_with_distinct_origins_is_degenerate() {
    let k = CameraIntrinsics::new(50.0, 50.0, 16.0, 16.0, 32, 32).unwrap();
    let mut rm = camera_to_raymap(&k, &Pose::identity());
    for v in 0..32 {
        for u in 0..32 {
            rm.origins[[v, u, 0]] = u as f64;
        }
    }
    assert!(matches!(
        raymap_to_camera(&rm),
        Err(GeometryError::DegenerateRaymap { .. })
    ));
}

#[test]
fn umeyama_identity_on_equal_clouds() {
    let src = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(0.3, 0.4, 1.2),
    ];
    let sim = umeyama_sim3(&src, &src).unwrap();
    assert_abs_diff_eq!(sim.s, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!((sim.r - nalgebra::Matrix3::identity()).norm(), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(sim.t.norm(), 0.0, epsilon = 1e-12);
}

#[test]
fn umeyama_recovers_constructed_similarity() {
    let src = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(0.3, 0.4, 1.2),
        Vector3::new(-0.5, 0.8, 0.1),
    ];
    // dst = 2 * Rz(90°) * src + (1, 2, 3)
    let rz = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t = Vector3::new(1.0, 2.0, 3.0);
    let dst: Vec<Vector3<f64>> = src.iter().map(|p| 2.0 * (rz * p) + t).collect();
    let sim = umeyama_sim3(&src, &dst).unwrap();
    assert_abs_diff_eq!(sim.s, 2.0, epsilon = 1e-12);
    let mut residual = 0.0f64;
    for (s, d) in src.iter().zip(dst.iter()) {
        residual += (sim.apply(*s) - d).norm_squared();
    }
    assert!(residual < 1e-9, "residual {residual}");
}

#[test]
fn umeyama_rejects_two_points_and_collinear() {
    let two = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
    assert!(matches!(
        umeyama_sim3(&two, &two),
        Err(GeometryError::DegenerateConfiguration { .. })
    ));
    let line: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
    assert!(matches!(
        umeyama_sim3(&line, &line),
        Err(GeometryError::DegenerateConfiguration { .. })
    ));
}

#[test]
fn umeyama_beats_identity_residual() {
    // Optimality sanity: the fitted transform never does worse than leaving
    // the points alone.
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for _ in 0..20 {
        let src: Vec<Vector3<f64>> = (0..12)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        let dst: Vec<Vector3<f64>> = src
            .iter()
            .map(|p| p + Vector3::new(rng.random_range(-0.3..0.3), 0.1, rng.random_range(-0.2..0.2)))
            .collect();
        let sim = umeyama_sim3(&src, &dst).unwrap();
        let fitted: f64 = src
            .iter()
            .zip(dst.iter())
            .map(|(s, d)| (sim.apply(*s) - d).norm_squared())
            .sum();
        let identity: f64 = src
            .iter()
            .zip(dst.iter())
            .map(|(s, d)| (s - d).norm_squared())
            .sum();
        assert!(fitted <= identity + 1e-12);
    }
}
