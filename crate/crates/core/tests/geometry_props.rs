mod common;

use centerpose_core::geom::{backproject_center, project, quat_to_rotation, rotation_angle_between};
use centerpose_core::CameraIntrinsics;
use nalgebra::{Matrix3, Vector2};
use proptest::prelude::*;

fn camera() -> impl Strategy<Value = CameraIntrinsics> {
    (200.0f64..900.0, 200.0f64..900.0, 100.0f64..400.0, 100.0f64..300.0)
        .prop_map(|(fx, fy, px, py)| CameraIntrinsics::new(fx, fy, px, py).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rotation_matrices_are_orthonormal(q in common::quaternion()) {
        let r = quat_to_rotation(&q).unwrap();
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backprojection_inverts_projection(
        k in camera(),
        u in -200.0f64..900.0,
        v in -200.0f64..700.0,
        tz in 0.01f64..20.0,
    ) {
        let c = Vector2::new(u, v);
        let t = backproject_center(&c, tz, &k).unwrap();
        prop_assert_eq!(t.z, tz);
        let back = project(&t, &k).unwrap();
        prop_assert!((back - c).norm() < 1e-9);
    }

    #[test]
    fn angle_is_symmetric_and_a_metric(a in common::quaternion(), b in common::quaternion(), c in common::quaternion()) {
        let ab = rotation_angle_between(&a, &b).unwrap();
        prop_assert!((ab - rotation_angle_between(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!((ab - rotation_angle_between(&-a, &b).unwrap()).abs() < 1e-9);
        let bc = rotation_angle_between(&b, &c).unwrap();
        let ac = rotation_angle_between(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-6);
    }

    #[test]
    fn pose_inverse_round_trips_points(p in common::pose(), pts in common::point_cloud(1, 40)) {
        let inv = p.inverse();
        for x in &pts {
            prop_assert!((inv.transform_point(&p.transform_point(x)) - x).norm() < 1e-9);
        }
        let id = p.compose(&inv);
        prop_assert!(id.translation.norm() < 1e-9);
        prop_assert!(rotation_angle_between(&id.rotation(), &centerpose_core::Quaternion::IDENTITY).unwrap() < 1e-6);
    }
}
