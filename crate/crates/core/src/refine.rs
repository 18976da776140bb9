//! Point-to-plane ICP against an observed depth map.
//!
//! Each iteration renders the model at the current pose over the bounding box
//! of the mask, pairs every masked observed pixel with the rendered surface
//! at the same pixel, and solves a reweighted Gauss-Newton step on the
//! point-plane residuals. Steps are halved until the mean inlier residual
//! does not increase.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{DepthMap, LabelMap};
use crate::geom::{CameraIntrinsics, Pose, Quaternion};
use crate::model::ObjectModel;
use crate::render::{rasterize, RangeImage, Window};
use crate::synth::{random_unit_vector, rotation_about_random_axis};

/// Fewest masked depth pixels accepted by [`icp_refine`].
pub const MIN_SUPPORT: usize = 50;

const MAX_HALVINGS: usize = 12;
/// Residual floor for the reweighting, meters.
const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Associations with `|r|` above this are ignored, meters.
    pub residual_reject_threshold: f64,
    /// Initial line-search step as a fraction of the Gauss-Newton step.
    pub step_size: f64,
    /// Stop once a step moves model points by less than this, meters.
    pub convergence_tol: f64,
    pub n_hypotheses: usize,
    /// Scale of the half-normal perturbation angle, degrees.
    pub perturb_rot_sigma: f64,
    /// Scale of the half-normal perturbation offset, meters.
    pub perturb_trans_sigma: f64,
    pub rng_seed: u64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            residual_reject_threshold: 0.02,
            step_size: 1.0,
            convergence_tol: 1e-5,
            n_hypotheses: 8,
            perturb_rot_sigma: 15.0,
            perturb_trans_sigma: 0.01,
            rng_seed: 0,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.max_iterations == 0
            || self.n_hypotheses == 0
            || !pos(self.residual_reject_threshold)
            || !pos(self.step_size)
            || !pos(self.convergence_tol)
            || !(self.perturb_rot_sigma >= 0.0 && self.perturb_trans_sigma >= 0.0)
        {
            return Err(Error::InvalidInput("ICP parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    /// Mean `|r|` over accepted associations, meters.
    pub mean_residual: f64,
    /// Accepted associations over masked observed pixels.
    pub inlier_fraction: f64,
    pub iterations: usize,
}

impl IcpResult {
    /// `inlier_fraction - mean_residual / threshold`; higher is better.
    pub fn alignment_score(&self, threshold: f64) -> f64 {
        self.inlier_fraction - self.mean_residual / threshold
    }
}

struct Observation {
    pixels: Vec<(usize, usize)>,
    points: Vec<Vector3<f64>>,
    window: Window,
}

fn observe(observed: &DepthMap, mask: &LabelMap, class_id: u16, k: &CameraIntrinsics) -> Result<Observation> {
    if (observed.width, observed.height) != (mask.width, mask.height) {
        return Err(Error::DimensionMismatch("depth map and mask differ in size".into()));
    }
    let pixels: Vec<(usize, usize)> =
        mask.pixels_of(class_id).into_iter().filter(|&(x, y)| observed.get(x, y) > 0.0).collect();
    if pixels.len() < MIN_SUPPORT {
        return Err(Error::InsufficientSupport { found: pixels.len(), required: MIN_SUPPORT });
    }
    let points = pixels.iter().map(|&(x, y)| k.ray(x as f64, y as f64) * observed.get(x, y) as f64).collect();
    let window = Window::around(&pixels, 0, mask.width, mask.height).expect("non-empty mask");
    Ok(Observation { pixels, points, window })
}

struct Evaluation {
    mean: f64,
    inliers: usize,
    /// Reweighted normal equations in `(omega, v)`.
    jtj: Matrix6<f64>,
    jtr: Vector6<f64>,
}

fn evaluate(obs: &Observation, model: &ObjectModel, pose: &Pose, k: &CameraIntrinsics, threshold: f64) -> Option<Evaluation> {
    let mut img = RangeImage::new(obs.window);
    rasterize(&mut img, model, pose, k, 0);
    let mut sum = 0.0;
    let mut inliers = 0;
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for (&(x, y), p_obs) in obs.pixels.iter().zip(&obs.points) {
        let Some((_, p, n)) = img.at(x, y) else {
            continue;
        };
        let d = p_obs - p;
        let r = n.dot(&d);
        if !(r.abs() <= threshold) {
            continue;
        }
        sum += r.abs();
        inliers += 1;
        // r(omega, v) ~ r + omega . (n x (d + a)) - n . v with a = p - t
        let a = p - pose.translation;
        let jw = n.cross(&(d + a));
        let j = Vector6::new(jw.x, jw.y, jw.z, -n.x, -n.y, -n.z);
        let w = 1.0 / r.abs().max(WEIGHT_FLOOR);
        jtj += w * j * j.transpose();
        jtr += w * r * j;
    }
    (inliers > 0).then(|| Evaluation { mean: sum / inliers as f64, inliers, jtj, jtr })
}

fn apply_step(pose: &Pose, step: &Vector6<f64>, alpha: f64) -> Result<Pose> {
    let omega = Vector3::new(step[0], step[1], step[2]) * alpha;
    let v = Vector3::new(step[3], step[4], step[5]) * alpha;
    Pose::new(Quaternion::exp(&omega) * pose.rotation(), pose.translation + v)
}

/// Refines `init` so the model's rendered surface fits the masked depth.
///
/// The returned pose never has a higher mean inlier residual than `init`.
pub fn icp_refine(
    observed: &DepthMap,
    mask: &LabelMap,
    class_id: u16,
    model: &ObjectModel,
    init: &Pose,
    k: &CameraIntrinsics,
    params: &IcpParams,
) -> Result<IcpResult> {
    params.validate()?;
    if !(init.translation.z > 0.0) {
        return Err(Error::InvalidDepth(init.translation.z));
    }
    let obs = observe(observed, mask, class_id, k)?;
    let thr = params.residual_reject_threshold;
    let mut pose = *init;
    let mut cur = evaluate(&obs, model, &pose, k, thr).ok_or(Error::AssociationFailure)?;
    let radius = model.radius();
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let mut a = cur.jtj;
        let damping = 1e-9 * (a.trace() / 6.0).max(1e-30);
        for i in 0..6 {
            a[(i, i)] += damping;
        }
        let Some(chol) = a.cholesky() else {
            break;
        };
        let step = -chol.solve(&cur.jtr);
        let mut alpha = params.step_size;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = apply_step(&pose, &step, alpha)?;
            if let Some(e) = evaluate(&obs, model, &trial, k, thr) {
                if e.mean <= cur.mean {
                    accepted = Some((trial, e));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, e)) = accepted else {
            break;
        };
        let moved = alpha * (Vector3::new(step[3], step[4], step[5]).norm() + Vector3::new(step[0], step[1], step[2]).norm() * radius);
        pose = trial;
        cur = e;
        if moved < params.convergence_tol {
            break;
        }
    }
    Ok(IcpResult {
        pose,
        mean_residual: cur.mean,
        inlier_fraction: cur.inliers as f64 / obs.pixels.len() as f64,
        iterations,
    })
}

#[derive(Debug, Clone)]
pub struct MultiHypothesisResult {
    pub best: IcpResult,
    pub best_index: usize,
    /// Starting pose of every hypothesis; index 0 is the initial estimate.
    pub starts: Vec<Pose>,
    /// Alignment score per hypothesis, `None` where refinement failed.
    pub scores: Vec<Option<f64>>,
}

/// Starting poses: `init` followed by `n_hypotheses - 1` seeded perturbations
/// with isotropic rotation axes and half-normal magnitudes.
pub fn hypothesis_starts(init: &Pose, params: &IcpParams) -> Result<Vec<Pose>> {
    let mut starts = vec![*init];
    let rot = Normal::new(0.0, params.perturb_rot_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let trans = Normal::new(0.0, params.perturb_trans_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for h in 1..params.n_hypotheses {
        let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        rng.set_stream(h as u64);
        let angle = rot.sample(&mut rng).abs();
        let dq = rotation_about_random_axis(&mut rng, angle);
        let dir = random_unit_vector(&mut rng);
        let offset = dir * trans.sample(&mut rng).abs();
        starts.push(Pose::new(dq * init.rotation(), init.translation + offset)?);
    }
    Ok(starts)
}

/// Runs [`icp_refine`] from `init` and from seeded perturbations of it and
/// keeps the result with the highest alignment score (lowest index on ties).
pub fn multi_hypothesis_refine(
    observed: &DepthMap,
    mask: &LabelMap,
    class_id: u16,
    model: &ObjectModel,
    init: &Pose,
    k: &CameraIntrinsics,
    params: &IcpParams,
) -> Result<MultiHypothesisResult> {
    params.validate()?;
    let starts = hypothesis_starts(init, params)?;
    let results: Vec<Result<IcpResult>> =
        starts.par_iter().map(|s| icp_refine(observed, mask, class_id, model, s, k, params)).collect();
    let thr = params.residual_reject_threshold;
    let scores: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().ok().map(|r| r.alignment_score(thr))).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    match best {
        Some((i, _)) => {
            let best = *results[i].as_ref().expect("scored result");
            Ok(MultiHypothesisResult { best, best_index: i, starts, scores })
        }
        None => Err(results.into_iter().last().expect("at least one hypothesis").expect_err("no result scored")),
    }
}
