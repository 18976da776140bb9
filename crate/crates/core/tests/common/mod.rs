#![allow(dead_code)]

use centerpose_core::{ObjectModel, Pose, Quaternion};
use nalgebra::Vector3;
use proptest::prelude::*;

pub fn quaternion() -> impl Strategy<Value = Quaternion> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |a| a.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|a| Quaternion::from_array(a).normalized().unwrap())
}

pub fn translation() -> impl Strategy<Value = Vector3<f64>> {
    (-0.3f64..0.3, -0.3f64..0.3, 0.3f64..2.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

pub fn pose() -> impl Strategy<Value = Pose> {
    (quaternion(), translation()).prop_map(|(q, t)| Pose::new(q, t).unwrap())
}

pub fn point_cloud(min: usize, max: usize) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(prop::array::uniform3(-0.05f64..0.05), min..max)
        .prop_map(|v| v.into_iter().map(Vector3::from).collect())
}

pub fn model(min: usize, max: usize) -> impl Strategy<Value = ObjectModel> {
    point_cloud(min, max).prop_filter_map("degenerate cloud", |pts| ObjectModel::new(1, "cloud", pts, None, None).ok())
}
