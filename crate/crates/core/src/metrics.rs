//! Pose evaluation: ADD, ADD-S, reprojection error, correctness and
//! accuracy-threshold curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{project, CameraIntrinsics, Pose};
use crate::model::ObjectModel;
use crate::nn::dist2;

pub const DEFAULT_CURVE_STEPS: usize = 1000;
/// AUC cap, meters.
pub const DEFAULT_MAX_THRESHOLD: f64 = 0.10;
pub const DEFAULT_CORRECT_FRACTION: f64 = 0.1;

fn non_empty(model: &ObjectModel) -> Result<()> {
    if model.is_empty() {
        return Err(Error::InvalidModel("empty model".into()));
    }
    Ok(())
}

/// Ground-truth posed points mapped into the estimate's object frame:
/// `R~^T (R x + T - T~)`.
fn into_estimate_frame<'a>(
    pose_est: &Pose,
    pose_gt: &Pose,
    model: &'a ObjectModel,
) -> impl Iterator<Item = (&'a nalgebra::Vector3<f64>, nalgebra::Vector3<f64>)> {
    let r_est_t = pose_est.rotation_matrix().transpose();
    // equal rotations give an exact identity, so a perfect estimate scores exactly 0
    let rel = if pose_est.rotation() == pose_gt.rotation() {
        nalgebra::Matrix3::identity()
    } else {
        r_est_t * pose_gt.rotation_matrix()
    };
    let offset = r_est_t * (pose_gt.translation - pose_est.translation);
    model.points().iter().map(move |x| (x, rel * x + offset))
}

/// Mean distance between corresponding model points under the two poses.
pub fn add(pose_est: &Pose, pose_gt: &Pose, model: &ObjectModel) -> Result<f64> {
    non_empty(model)?;
    let sum: f64 = into_estimate_frame(pose_est, pose_gt, model).map(|(x, y)| dist2(&y, x).sqrt()).sum();
    Ok(sum / model.len() as f64)
}

/// Mean closest-point distance from the ground-truth posed model to the
/// estimated posed model.
pub fn add_s(pose_est: &Pose, pose_gt: &Pose, model: &ObjectModel) -> Result<f64> {
    non_empty(model)?;
    let sum: f64 = into_estimate_frame(pose_est, pose_gt, model).map(|(_, y)| model.nearest(&y).1.sqrt()).sum();
    Ok(sum / model.len() as f64)
}

/// Mean pixel distance between corresponding projected model points.
pub fn reprojection_error(pose_est: &Pose, pose_gt: &Pose, model: &ObjectModel, k: &CameraIntrinsics) -> Result<f64> {
    non_empty(model)?;
    let mut sum = 0.0;
    for x in model.points() {
        let a = project(&pose_gt.transform_point(x), k)?;
        let b = project(&pose_est.transform_point(x), k)?;
        sum += (a - b).norm();
    }
    Ok(sum / model.len() as f64)
}

/// `distance < fraction * diameter`.
pub fn is_correct(distance: f64, model: &ObjectModel, fraction: f64) -> bool {
    distance < fraction * model.diameter()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub thresholds: Vec<f64>,
    pub accuracy: Vec<f64>,
    /// Accuracy as the threshold tends to zero from above: the fraction of
    /// exactly-zero distances.
    pub accuracy_at_zero: f64,
}

/// Fraction of distances strictly below each of `n_steps` uniform thresholds
/// `max_threshold * i / n_steps`, `i = 1..=n_steps`.
pub fn accuracy_curve(distances: &[f64], max_threshold: f64, n_steps: usize) -> Result<AccuracyCurve> {
    if distances.is_empty() {
        return Err(Error::InvalidInput("accuracy curve needs at least one distance".into()));
    }
    if !(max_threshold > 0.0 && max_threshold.is_finite()) || n_steps == 0 {
        return Err(Error::InvalidInput("max threshold and step count must be positive".into()));
    }
    let mut sorted: Vec<f64> = distances.iter().map(|&d| if d.is_nan() { f64::INFINITY } else { d }).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let thresholds: Vec<f64> = (1..=n_steps).map(|i| max_threshold * i as f64 / n_steps as f64).collect();
    let accuracy = thresholds.iter().map(|&t| sorted.partition_point(|&d| d < t) as f64 / n).collect();
    let accuracy_at_zero = sorted.partition_point(|&d| d <= 0.0) as f64 / n;
    Ok(AccuracyCurve { thresholds, accuracy, accuracy_at_zero })
}

/// Trapezoidal area under the curve over `[0, max_threshold]`, as a percentage.
pub fn auc(curve: &AccuracyCurve) -> f64 {
    let Some(&t_max) = curve.thresholds.last() else {
        return 0.0;
    };
    let mut area = 0.0;
    let (mut t_prev, mut a_prev) = (0.0, curve.accuracy_at_zero);
    for (&t, &a) in curve.thresholds.iter().zip(&curve.accuracy) {
        area += 0.5 * (a + a_prev) * (t - t_prev);
        t_prev = t;
        a_prev = a;
    }
    100.0 * area / t_max
}
