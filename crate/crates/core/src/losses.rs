//! Rotation regression losses over model point sets.
//!
//! `PLoss` compares each model point with its own image under the two
//! rotations; `SLoss` compares it with the closest point of the ground-truth
//! posed model, so rotations that map the shape onto itself cost nothing.
//! Gradients are taken with respect to the estimated quaternion and projected
//! onto the tangent space of the unit sphere at the normalized estimate.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rotation_angle_between, Quaternion};
use crate::model::ObjectModel;
use crate::nn::dist2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ploss")]
    PLoss,
    #[serde(rename = "sloss")]
    SLoss,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ploss" => Ok(LossKind::PLoss),
            "sloss" => Ok(LossKind::SLoss),
            _ => Err(Error::InvalidInput(format!("unknown loss kind `{s}` (expected ploss or sloss)"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::PLoss => "ploss",
            LossKind::SLoss => "sloss",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossResult {
    /// Squared meters.
    pub value: f64,
    /// d(value)/d(w, x, y, z) of the estimate, tangent-projected.
    pub gradient: [f64; 4],
}

/// Partial derivatives of the rotation matrix with respect to `(w, x, y, z)`.
fn rotation_partials(q: &Quaternion) -> [Matrix3<f64>; 4] {
    let Quaternion { w, x, y, z } = *q;
    [
        2.0 * Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0),
        2.0 * Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x),
        2.0 * Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y),
        2.0 * Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0),
    ]
}

fn project_tangent(g: [f64; 4], u: &Quaternion) -> [f64; 4] {
    let ua = u.to_array();
    let dot: f64 = g.iter().zip(&ua).map(|(a, b)| a * b).sum();
    [g[0] - dot * ua[0], g[1] - dot * ua[1], g[2] - dot * ua[2], g[3] - dot * ua[3]]
}

/// Index of the ground-truth model point matched to each point under the
/// estimated rotation (`SLoss`), or the identity matching (`PLoss`).
pub fn correspondences(kind: LossKind, q_est: &Quaternion, q_gt: &Quaternion, model: &ObjectModel) -> Result<Vec<usize>> {
    let est = q_est.normalized()?;
    let gt = q_gt.normalized()?;
    let rel = gt.rotation_unchecked().transpose() * est.rotation_unchecked();
    Ok(model
        .points()
        .iter()
        .enumerate()
        .map(|(i, x)| match kind {
            LossKind::PLoss => i,
            LossKind::SLoss => model.nearest(&(rel * x)).0,
        })
        .collect())
}

/// Evaluates the loss and its tangent-projected gradient.
///
/// Distances are measured in the ground-truth object frame, where the
/// estimated model is `R(q)^T R(q~) x`; this keeps the nearest-neighbor
/// minimum and the self-match term on identical arithmetic, so
/// `sloss <= ploss` holds exactly in floating point.
pub fn loss(kind: LossKind, q_est: &Quaternion, q_gt: &Quaternion, model: &ObjectModel) -> Result<LossResult> {
    if model.is_empty() {
        return Err(Error::InvalidModel("empty model".into()));
    }
    let est = q_est.normalized()?;
    let gt = q_gt.normalized()?;
    let r_est = est.rotation_unchecked();
    let r_gt = gt.rotation_unchecked();
    let rel = r_gt.transpose() * r_est;
    let points = model.points();
    let mut sum = 0.0;
    let mut outer = Matrix3::zeros();
    for x in points {
        let y = rel * x;
        let (x2, d) = match kind {
            LossKind::PLoss => (x, dist2(&y, x)),
            LossKind::SLoss => {
                let (j, d) = model.nearest(&y);
                (&points[j], d)
            }
        };
        sum += d;
        let residual: Vector3<f64> = r_est * x - r_gt * x2;
        outer += residual * x.transpose();
    }
    let m = points.len() as f64;
    outer /= m;
    let partials = rotation_partials(&est);
    let mut g = [0.0; 4];
    for (gk, dk) in g.iter_mut().zip(&partials) {
        *gk = outer.component_mul(dk).sum();
    }
    Ok(LossResult { value: sum / (2.0 * m), gradient: project_tangent(g, &est) })
}

pub fn ploss(q_est: &Quaternion, q_gt: &Quaternion, model: &ObjectModel) -> Result<LossResult> {
    loss(LossKind::PLoss, q_est, q_gt, model)
}

pub fn sloss(q_est: &Quaternion, q_gt: &Quaternion, model: &ObjectModel) -> Result<LossResult> {
    loss(LossKind::SLoss, q_est, q_gt, model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub analytic: [f64; 4],
    pub numeric: [f64; 4],
    /// False when some finite-difference probe changed the nearest-neighbor
    /// matching; the loss is not differentiable across such switches.
    pub correspondences_stable: bool,
}

/// Compares the analytic gradient with central differences taken along each
/// ambient axis and renormalized back onto the sphere.
///
/// The relative error of each component is scaled by the larger max-norm of
/// the two gradients; when both are below `1e-12` the absolute error is
/// reported instead.
pub fn loss_gradient_check(
    kind: LossKind,
    q_est: &Quaternion,
    q_gt: &Quaternion,
    model: &ObjectModel,
    h: f64,
) -> Result<GradientCheck> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    let u = q_est.normalized()?;
    let analytic = loss(kind, &u, q_gt, model)?.gradient;
    let base_match = correspondences(kind, &u, q_gt, model)?;
    let mut stable = true;
    let mut numeric = [0.0; 4];
    for (k, nk) in numeric.iter_mut().enumerate() {
        let mut plus = u.to_array();
        let mut minus = u.to_array();
        plus[k] += h;
        minus[k] -= h;
        let qp = Quaternion::from_array(plus).normalized()?;
        let qm = Quaternion::from_array(minus).normalized()?;
        if kind == LossKind::SLoss {
            stable &= correspondences(kind, &qp, q_gt, model)? == base_match;
            stable &= correspondences(kind, &qm, q_gt, model)? == base_match;
        }
        *nk = (loss(kind, &qp, q_gt, model)?.value - loss(kind, &qm, q_gt, model)?.value) / (2.0 * h);
    }
    let scale = analytic.iter().chain(&numeric).fold(0.0f64, |a, &b| a.max(b.abs()));
    let max_abs = analytic.iter().zip(&numeric).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let max_rel_error = if scale < 1e-12 { max_abs } else { max_abs / scale };
    Ok(GradientCheck { max_rel_error, analytic, numeric, correspondences_stable: stable })
}

/// Default descent rate, scaled internally by `1 / diameter^2`.
pub const DEFAULT_LEARNING_RATE: f64 = 2.0;
pub const DEFAULT_STEPS: usize = 500;

/// Projected gradient descent on the unit quaternion sphere from each
/// initial estimate; returns the final estimate and its angle (degrees) to
/// `q_gt`.
pub fn optimize_rotation(
    model: &ObjectModel,
    q_gt: &Quaternion,
    kind: LossKind,
    inits: &[Quaternion],
    steps: usize,
    lr: f64,
) -> Result<Vec<(Quaternion, f64)>> {
    optimize_rotation_over_labels(model, std::slice::from_ref(q_gt), kind, inits, steps, lr)
}

/// Like [`optimize_rotation`], but descends on the mean loss over several
/// ground-truth labels.
///
/// This models a regressor trained on a symmetric object whose annotations
/// use different but visually identical rotations for the same appearance.
/// Angles are reported against `labels[0]`.
pub fn optimize_rotation_over_labels(
    model: &ObjectModel,
    labels: &[Quaternion],
    kind: LossKind,
    inits: &[Quaternion],
    steps: usize,
    lr: f64,
) -> Result<Vec<(Quaternion, f64)>> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("at least one ground-truth rotation is required".into()));
    }
    let labels: Vec<Quaternion> = labels.iter().map(|q| q.normalized()).collect::<Result<_>>()?;
    let rate = lr / (model.diameter() * model.diameter());
    inits
        .par_iter()
        .map(|init| {
            let mut u = init.normalized()?;
            for _ in 0..steps {
                let mut g = [0.0; 4];
                for label in &labels {
                    let r = loss(kind, &u, label, model)?;
                    for (a, b) in g.iter_mut().zip(r.gradient) {
                        *a += b / labels.len() as f64;
                    }
                }
                let next = Quaternion::new(u.w - rate * g[0], u.x - rate * g[1], u.y - rate * g[2], u.z - rate * g[3]);
                u = next.normalized()?;
            }
            let angle = rotation_angle_between(&u, &labels[0])?;
            Ok((u, angle))
        })
        .collect()
}
