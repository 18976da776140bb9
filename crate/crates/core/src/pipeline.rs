//! End-to-end evaluation on random synthetic scenes: render, perturb the
//! exact fields, detect, optionally refine with ICP, and score.
//!
//! There is no rotation regressor here. The rotation estimate for a detected
//! object is the ground truth rotated by a seeded random angle
//! (`rotation_sigma`), which plays the role of a network's rotation error.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::metrics::{accuracy_curve, add, add_s, auc, is_correct, DEFAULT_CORRECT_FRACTION, DEFAULT_CURVE_STEPS, DEFAULT_MAX_THRESHOLD};
use crate::refine::{multi_hypothesis_refine, IcpParams};
use crate::synth::{ground_truth_fields, perturb, random_scene, rotation_about_random_axis, ModelRegistry, NoiseSpec, SceneConfig};
use crate::voting::{detect, Detection, VotingParams};

/// Prediction noise for pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineNoise {
    pub direction_sigma: f64,
    pub depth_sigma: f64,
    pub depth_bias_sigma: f64,
    pub label_flip_rate: f64,
    /// Scale of the half-normal rotation error of the estimate, degrees.
    pub rotation_sigma: f64,
}

impl PipelineNoise {
    pub fn none() -> Self {
        Self { direction_sigma: 0.0, depth_sigma: 0.0, depth_bias_sigma: 0.0, label_flip_rate: 0.0, rotation_sigma: 0.0 }
    }

    /// 0.05 rad direction jitter, 5 mm per-pixel depth noise, 15 degree
    /// rotation error scale.
    pub fn moderate() -> Self {
        Self { direction_sigma: 0.05, depth_sigma: 0.005, depth_bias_sigma: 0.0, label_flip_rate: 0.0, rotation_sigma: 15.0 }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::none()),
            "moderate" => Ok(Self::moderate()),
            _ => Err(Error::InvalidInput(format!("unknown noise preset `{name}` (expected none or moderate)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scenes: usize,
    pub seed: u64,
    pub noise: PipelineNoise,
    pub refine: bool,
    pub voting: VotingParams,
    pub icp: IcpParams,
    pub scene: SceneConfig,
    /// AUC cap, meters.
    pub max_threshold: f64,
    pub curve_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenes: 20,
            seed: 0,
            noise: PipelineNoise::none(),
            refine: false,
            voting: VotingParams::default(),
            icp: IcpParams::default(),
            scene: SceneConfig::default(),
            max_threshold: DEFAULT_MAX_THRESHOLD,
            curve_steps: DEFAULT_CURVE_STEPS,
        }
    }
}

/// One ground-truth instance and how well it was recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub scene: usize,
    pub instance: usize,
    pub class_id: u16,
    pub visibility: f64,
    pub gt: Pose,
    /// `None` when no detection matched the instance.
    pub estimate: Option<Pose>,
    pub refined: Option<Pose>,
    pub center_error_px: Option<f64>,
    pub add: Option<f64>,
    pub add_s: Option<f64>,
    pub add_refined: Option<f64>,
    pub add_s_refined: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub seed: u64,
    pub scenes: usize,
    pub instances: usize,
    pub detected: usize,
    pub max_threshold: f64,
    /// Final scores: refined when refinement ran, else unrefined.
    pub auc_add: f64,
    pub auc_adds: f64,
    pub auc_add_unrefined: f64,
    pub auc_adds_unrefined: f64,
    pub auc_add_refined: Option<f64>,
    pub auc_adds_refined: Option<f64>,
    /// Fraction of instances with ADD-S below 10% of the model diameter.
    pub accuracy_adds: f64,
}

/// Independent per-scene seed.
pub fn scene_seed(seed: u64, scene: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((scene as u64) << 8) | purpose);
    rng.next_u64()
}

/// Pairs each instance with the unused same-class detection whose center is
/// nearest its projected origin, within `gate` pixels.
fn match_detections(truth: &[(u16, nalgebra::Vector2<f64>)], detections: &[Detection], gate: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; detections.len()];
    truth
        .iter()
        .map(|(class, center)| {
            let best = detections
                .iter()
                .enumerate()
                .filter(|(i, d)| !used[*i] && d.class_id == *class)
                .map(|(i, d)| (i, (d.center - center).norm()))
                .filter(|&(_, e)| e <= gate)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            best.map(|(i, _)| {
                used[i] = true;
                i
            })
        })
        .collect()
}

/// Runs one scene end to end.
pub fn run_scene(models: &ModelRegistry, config: &PipelineConfig, index: usize) -> Result<Vec<FrameRecord>> {
    let generated = random_scene(models, &config.scene, scene_seed(config.seed, index, 0))?;
    let scene = &generated.scene;
    let k = scene.intrinsics;
    let truth = ground_truth_fields(scene, &generated.rendered)?;
    let noise = NoiseSpec {
        direction_sigma: config.noise.direction_sigma,
        depth_sigma: config.noise.depth_sigma,
        depth_bias_sigma: config.noise.depth_bias_sigma,
        label_flip_rate: config.noise.label_flip_rate,
        rng_seed: scene_seed(config.seed, index, 1),
    };
    let (field, labels) = perturb(&truth.field, &generated.rendered.labels, &noise)?;
    let detections = detect(&labels, &field, &k, &config.voting)?;
    let centers: Vec<_> = truth.instances.iter().map(|t| (t.class_id, t.center)).collect();
    let matches = match_detections(&centers, &detections, config.voting.nms_radius as f64);
    let mut rot_rng = ChaCha8Rng::seed_from_u64(scene_seed(config.seed, index, 2));
    let rot_noise = Normal::new(0.0, config.noise.rotation_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut records = Vec::with_capacity(scene.instances.len());
    for (i, inst) in scene.instances.iter().enumerate() {
        let model = &models[&inst.class_id];
        let mut rec = FrameRecord {
            scene: index,
            instance: i,
            class_id: inst.class_id,
            visibility: generated.visibility[i],
            gt: inst.pose,
            estimate: None,
            refined: None,
            center_error_px: None,
            add: None,
            add_s: None,
            add_refined: None,
            add_s_refined: None,
        };
        // drawn for every instance so estimates do not depend on detection outcomes
        let angle = rot_noise.sample(&mut rot_rng).abs();
        let dq = rotation_about_random_axis(&mut rot_rng, angle);
        if let Some(d) = matches[i].map(|j| &detections[j]) {
            let est = Pose::new(dq * inst.pose.rotation(), d.translation)?;
            rec.center_error_px = Some((d.center - truth.instances[i].center).norm());
            rec.add = Some(add(&est, &inst.pose, model)?);
            rec.add_s = Some(add_s(&est, &inst.pose, model)?);
            rec.estimate = Some(est);
            if config.refine {
                let icp = IcpParams { rng_seed: scene_seed(config.seed, index, 16 + i as u64), ..config.icp };
                let refined = match multi_hypothesis_refine(&generated.rendered.depth, &labels, inst.class_id, model, &est, &k, &icp) {
                    Ok(r) => r.best.pose,
                    // too little support or no overlap: keep the voting estimate
                    Err(_) => est,
                };
                rec.add_refined = Some(add(&refined, &inst.pose, model)?);
                rec.add_s_refined = Some(add_s(&refined, &inst.pose, model)?);
                rec.refined = Some(refined);
            }
        }
        records.push(rec);
    }
    Ok(records)
}

fn curve_auc(values: impl Iterator<Item = Option<f64>>, config: &PipelineConfig) -> Result<f64> {
    let d: Vec<f64> = values.map(|v| v.unwrap_or(f64::INFINITY)).collect();
    Ok(auc(&accuracy_curve(&d, config.max_threshold, config.curve_steps)?))
}

/// Aggregates per-instance records into AUC scores.
pub fn summarize(records: &[FrameRecord], models: &ModelRegistry, config: &PipelineConfig) -> Result<PipelineSummary> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no instances to score".into()));
    }
    let auc_add_unrefined = curve_auc(records.iter().map(|r| r.add), config)?;
    let auc_adds_unrefined = curve_auc(records.iter().map(|r| r.add_s), config)?;
    let (auc_add_refined, auc_adds_refined) = if config.refine {
        (
            Some(curve_auc(records.iter().map(|r| r.add_refined), config)?),
            Some(curve_auc(records.iter().map(|r| r.add_s_refined), config)?),
        )
    } else {
        (None, None)
    };
    let final_adds = |r: &FrameRecord| if config.refine { r.add_s_refined } else { r.add_s };
    let correct = records
        .iter()
        .filter(|r| final_adds(r).is_some_and(|d| is_correct(d, &models[&r.class_id], DEFAULT_CORRECT_FRACTION)))
        .count();
    Ok(PipelineSummary {
        seed: config.seed,
        scenes: config.scenes,
        instances: records.len(),
        detected: records.iter().filter(|r| r.estimate.is_some()).count(),
        max_threshold: config.max_threshold,
        auc_add: auc_add_refined.unwrap_or(auc_add_unrefined),
        auc_adds: auc_adds_refined.unwrap_or(auc_adds_unrefined),
        auc_add_unrefined,
        auc_adds_unrefined,
        auc_add_refined,
        auc_adds_refined,
        accuracy_adds: correct as f64 / records.len() as f64,
    })
}

/// Runs every scene (in parallel on the current rayon pool) and summarizes.
/// Records come back in scene order regardless of scheduling.
pub fn run_pipeline(models: &ModelRegistry, config: &PipelineConfig) -> Result<(Vec<FrameRecord>, PipelineSummary)> {
    if config.scenes == 0 {
        return Err(Error::InvalidInput("at least one scene is required".into()));
    }
    config.voting.validate()?;
    config.icp.validate()?;
    let per_scene: Vec<Vec<FrameRecord>> =
        (0..config.scenes).into_par_iter().map(|i| run_scene(models, config, i)).collect::<Result<_>>()?;
    let records: Vec<FrameRecord> = per_scene.into_iter().flatten().collect();
    let summary = summarize(&records, models, config)?;
    Ok((records, summary))
}

/// Translation error helper used by reports: `|T_est - T_gt|`.
pub fn translation_error(est: &Pose, gt: &Pose) -> f64 {
    (est.translation - gt.translation).norm()
}

