use dockport::geometry::{
    back_project, base_rotation, project, rotation_about_axis, CameraIntrinsics, PortPose, UnitRay,
};
use nalgebra::{Rotation3, Vector2, Vector3};
use proptest::prelude::*;

fn orthonormal(r: &Rotation3<f64>) -> bool {
    let m = r.matrix();
    (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max() < 1e-9 && (m.determinant() - 1.0).abs() < 1e-9
}

fn unit_vector() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn project_inverts_back_project(u in 0.0f64..346.0, v in 0.0f64..260.0, depth in 0.05f64..50.0) {
        let k = CameraIntrinsics::davis346();
        let px = Vector2::new(u, v);
        let ray = back_project(&k, &px);
        let point = ray.as_vector() * (depth / ray.z);
        let back = project(&k, &point).unwrap();
        prop_assert!((back - px).norm() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn constructed_rotations_are_proper(n in unit_vector(), axis in unit_vector(), a in -720.0f64..720.0, yaw in 0.0f64..360.0) {
        let ray = UnitRay::new(axis).unwrap();
        prop_assert!(orthonormal(&rotation_about_axis(&ray, a)));
        prop_assert!(orthonormal(&base_rotation(&n)));
        let pose = PortPose::from_normal_yaw(&n, yaw, Vector3::new(0.0, 0.0, 1.0));
        prop_assert!(orthonormal(&pose.rotation));
        prop_assert!((pose.normal() - n).norm() < 1e-9);
    }

    #[test]
    fn rotations_about_one_axis_compose(axis in unit_vector(), a in -360.0f64..360.0, b in -360.0f64..360.0) {
        let ray = UnitRay::new(axis).unwrap();
        let lhs = rotation_about_axis(&ray, a) * rotation_about_axis(&ray, b);
        let rhs = rotation_about_axis(&ray, a + b);
        prop_assert!((lhs.matrix() - rhs.matrix()).abs().max() < 1e-9);
    }
}
