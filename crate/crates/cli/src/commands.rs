use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use centerpose_core::losses::{loss as rotation_loss, optimize_rotation_over_labels, LossKind};
use centerpose_core::geom::rotation_angle_between;
use centerpose_core::metrics::{accuracy_curve, add, add_s, auc, is_correct, reprojection_error, DEFAULT_CORRECT_FRACTION, DEFAULT_CURVE_STEPS};
use centerpose_core::pipeline::{run_pipeline, scene_seed, PipelineConfig, PipelineNoise, PipelineSummary};
use centerpose_core::refine::{multi_hypothesis_refine, IcpParams};
use centerpose_core::synth::{
    default_intrinsics, ground_truth_fields, occluded_centers, perturb, random_rotation, random_scene, render_scene, visibility,
    Instance, ModelRegistry, NoiseSpec, Scene, SceneConfig,
};
use centerpose_core::tensor::Tensor;
use centerpose_core::voting::{detect, VotingParams};
use centerpose_core::{CameraIntrinsics, CenterField, DepthMap, LabelMap, Pose, Quaternion};

use crate::io::{
    build_registry, csv_num, ensure_distinct, json_bytes, read_intrinsics, read_json, read_pose, read_pose_list, sig9, Outputs,
    PoseJson,
};
use crate::{EvalArgs, HistogramArgs, LossArgs, NoiseFlags, PipelineArgs, RefineArgs, SynthArgs, VoteArgs};

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    Tensor::read_file(path).with_context(|| format!("cannot read tensor {}", path.display()))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NoiseFile {
    direction_sigma: f64,
    depth_sigma: f64,
    depth_bias_sigma: f64,
    label_flip_rate: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    width: Option<usize>,
    height: Option<usize>,
    intrinsics: Option<CameraIntrinsics>,
    instances: Vec<PoseJson>,
    noise: Option<NoiseFile>,
}

#[derive(Serialize)]
struct InstanceRecord {
    class_id: u16,
    center_px: [f64; 2],
    depth_m: f64,
    visible_pixels: usize,
    visibility: f64,
    center_occluded: bool,
}

#[derive(Serialize)]
struct SceneTruth {
    seed: u64,
    scene: usize,
    width: usize,
    height: usize,
    intrinsics: CameraIntrinsics,
    noise: NoiseSpec,
    poses: Vec<PoseJson>,
    instances: Vec<InstanceRecord>,
}

fn noise_spec(noise: &NoiseFlags, file: Option<&NoiseFile>, rng_seed: u64) -> NoiseSpec {
    match file {
        Some(f) => NoiseSpec {
            direction_sigma: f.direction_sigma,
            depth_sigma: f.depth_sigma,
            depth_bias_sigma: f.depth_bias_sigma,
            label_flip_rate: f.label_flip_rate,
            rng_seed,
        },
        None => NoiseSpec {
            direction_sigma: noise.direction_sigma,
            depth_sigma: noise.depth_sigma,
            depth_bias_sigma: noise.depth_bias_sigma,
            label_flip_rate: noise.label_flip_rate,
            rng_seed,
        },
    }
}

/// Renders one scene and encodes its files.
fn synth_files(
    scene: &Scene,
    models: &ModelRegistry,
    noise: NoiseSpec,
    seed: u64,
    index: usize,
    dir: &Path,
) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let rendered = render_scene(scene, models)?;
    let vis = visibility(scene, models, &rendered)?;
    let occluded = occluded_centers(scene, &rendered);
    let truth = ground_truth_fields(scene, &rendered)?;
    let (field, labels) = perturb(&truth.field, &rendered.labels, &noise)?;
    let record = SceneTruth {
        seed,
        scene: index,
        width: scene.width,
        height: scene.height,
        intrinsics: scene.intrinsics,
        noise,
        poses: scene.instances.iter().map(|i| PoseJson::from_pose(i.class_id, &i.pose)).collect(),
        instances: truth
            .instances
            .iter()
            .enumerate()
            .map(|(i, t)| InstanceRecord {
                class_id: t.class_id,
                center_px: [t.center.x, t.center.y],
                depth_m: t.depth,
                visible_pixels: t.visible_pixels,
                visibility: vis[i],
                center_occluded: occluded[i],
            })
            .collect(),
    };
    Ok(vec![
        (dir.join("labels.pft"), labels.to_tensor().to_bytes()),
        (dir.join("field.pft"), field.to_tensor().to_bytes()),
        (dir.join("depth.pft"), rendered.depth.to_tensor().to_bytes()),
        (dir.join("intrinsics.json"), json_bytes(&scene.intrinsics)?),
        (dir.join("gt.json"), json_bytes(&record)?),
    ])
}

pub(crate) fn synth(a: SynthArgs) -> Result<()> {
    let models = build_registry(&a.model, None)?;
    let intrinsics = a.intrinsics.as_deref().map(read_intrinsics).transpose()?;
    let scene_dir = |i: usize| a.out.join(format!("scene_{i:04}"));
    let files: Vec<Vec<(PathBuf, Vec<u8>)>> = if let Some(path) = &a.scene {
        let desc: SceneFile = read_json(path)?;
        let k = intrinsics.or(desc.intrinsics).unwrap_or_else(default_intrinsics);
        let instances = desc
            .instances
            .iter()
            .map(|p| Ok(Instance { class_id: p.class_id, pose: p.to_pose()? }))
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene { width: desc.width.unwrap_or(640), height: desc.height.unwrap_or(480), intrinsics: k, instances };
        ensure!(scene.width > 0 && scene.height > 0, "image size must be positive");
        scene.validate(&models)?;
        let noise = noise_spec(&a.noise, desc.noise.as_ref(), scene_seed(a.seed, 0, 1));
        vec![synth_files(&scene, &models, noise, a.seed, 0, &scene_dir(0))?]
    } else {
        let n = a.random.unwrap_or(0);
        ensure!(n > 0, "--random needs at least one scene");
        let mut config = SceneConfig { require_occluded_center: a.occluded_center, ..SceneConfig::default() };
        if let Some(k) = intrinsics {
            config.intrinsics = k;
        }
        with_jobs(a.jobs, || {
            use rayon::prelude::*;
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let generated = random_scene(&models, &config, scene_seed(a.seed, i, 0))?;
                    let noise = noise_spec(&a.noise, None, scene_seed(a.seed, i, 1));
                    synth_files(&generated.scene, &models, noise, a.seed, i, &scene_dir(i))
                })
                .collect::<Result<Vec<_>>>()
        })??
    };
    let mut out = Outputs::default();
    for (path, bytes) in files.into_iter().flatten() {
        out.file(path, bytes);
    }
    let inputs: Vec<&Path> = a.scene.iter().map(|p| p.as_path()).collect();
    ensure_distinct(&inputs, &out.paths())?;
    out.commit()
}

// ---------------------------------------------------------------- vote

#[derive(Serialize)]
struct DetectionRecord {
    class_id: u16,
    center_px: [f64; 2],
    score: u32,
    bbox: [usize; 4],
    depth_m: f64,
    translation_m: [f64; 3],
    inliers: usize,
}

#[derive(Serialize)]
struct VoteOutput {
    seed: u64,
    params: VotingParams,
    detections: Vec<DetectionRecord>,
}

pub(crate) fn vote(a: VoteArgs) -> Result<()> {
    let labels = LabelMap::from_tensor(&read_tensor(&a.labels)?)?;
    let field = CenterField::from_tensor(&read_tensor(&a.field)?)?;
    let k = read_intrinsics(&a.intrinsics)?;
    let params = a.voting.params();
    let detections = detect(&labels, &field, &k, &params)?;
    let output = VoteOutput {
        seed: a.seed,
        params,
        detections: detections
            .iter()
            .map(|d| DetectionRecord {
                class_id: d.class_id,
                center_px: [d.center.x, d.center.y],
                score: d.score,
                bbox: d.bbox,
                depth_m: d.depth,
                translation_m: [d.translation.x, d.translation.y, d.translation.z],
                inliers: d.inliers.len(),
            })
            .collect(),
    };
    let mut out = Outputs::default();
    out.file_or_stdout(a.out.as_deref(), json_bytes(&output)?);
    ensure_distinct(&[&a.labels, &a.field, &a.intrinsics], &out.paths())?;
    out.commit()
}

// ---------------------------------------------------------------- loss

#[derive(Serialize)]
struct LossOutput {
    seed: u64,
    kind: LossKind,
    value_m2: f64,
    gradient_wxyz: [f64; 4],
    angle_deg: f64,
}

pub(crate) fn loss(a: LossArgs) -> Result<()> {
    let est = read_pose(&a.est)?.to_pose()?;
    let gt_json = read_pose(&a.gt)?;
    let gt = gt_json.to_pose()?;
    let model = a.model.load(a.model.class_id.unwrap_or(gt_json.class_id))?;
    let r = rotation_loss(a.kind, &est.rotation(), &gt.rotation(), &model)?;
    let output = LossOutput {
        seed: a.seed,
        kind: a.kind,
        value_m2: r.value,
        gradient_wxyz: r.gradient,
        angle_deg: rotation_angle_between(&est.rotation(), &gt.rotation())?,
    };
    let mut out = Outputs::default();
    out.file_or_stdout(a.out.as_deref(), json_bytes(&output)?);
    ensure_distinct(&[&a.est, &a.gt], &out.paths())?;
    out.commit()
}

// ---------------------------------------------------------------- histogram

pub(crate) fn histogram(a: HistogramArgs) -> Result<()> {
    ensure!(a.runs > 0, "--runs must be positive");
    ensure!(a.lr > 0.0 && a.lr.is_finite(), "--lr must be positive");
    let gt = match &a.gt {
        Some(p) => read_pose(p)?.to_pose()?.rotation(),
        None => Quaternion::IDENTITY,
    };
    let mut labels = vec![gt];
    for p in &a.extra_label {
        labels.push(read_pose(p)?.to_pose()?.rotation());
    }
    let model = a.model.load(a.model.class_id.unwrap_or(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let inits: Vec<Quaternion> = (0..a.runs).map(|_| random_rotation(&mut rng)).collect();
    let finals = optimize_rotation_over_labels(&model, &labels, a.kind, &inits, a.steps, a.lr)?;
    let mut csv = String::from("run,seed,kind,init_angle_deg,final_angle_deg\n");
    for (i, (init, (_, angle))) in inits.iter().zip(&finals).enumerate() {
        let init_angle = rotation_angle_between(init, &labels[0])?;
        csv += &format!("{i},{},{},{},{}\n", a.seed, a.kind, csv_num(Some(init_angle)), csv_num(Some(*angle)));
    }
    let mut out = Outputs::default();
    out.file_or_stdout(a.out.as_deref(), csv.into_bytes());
    let mut inputs: Vec<&Path> = a.extra_label.iter().map(|p| p.as_path()).collect();
    inputs.extend(a.gt.as_deref());
    ensure_distinct(&inputs, &out.paths())?;
    out.commit()
}

// ---------------------------------------------------------------- eval

#[derive(Serialize)]
struct EvalSummary {
    seed: u64,
    frames: usize,
    estimated: usize,
    max_threshold: f64,
    auc_add: f64,
    auc_adds: f64,
    accuracy_adds: f64,
}

pub(crate) fn eval(a: EvalArgs) -> Result<()> {
    let gt = read_pose_list(&a.gt)?;
    let est = read_pose_list(&a.est)?;
    ensure!(!gt.is_empty(), "{}: no ground-truth poses", a.gt.display());
    ensure!(gt.len() == est.len(), "{} ground-truth poses but {} estimates", gt.len(), est.len());
    let k = match &a.intrinsics {
        Some(p) => read_intrinsics(p)?,
        None => default_intrinsics(),
    };
    let classes: std::collections::BTreeSet<u16> = gt.iter().flatten().map(|p| p.class_id).collect();
    let single = if classes.len() == 1 { classes.first().copied() } else { None };
    let models = build_registry(&a.model, single)?;

    let mut csv = String::from("frame,class_id,add_m,add_s_m,reproj_px,correct,seed\n");
    let (mut d_add, mut d_adds) = (Vec::new(), Vec::new());
    let mut correct = 0usize;
    for (i, (g, e)) in gt.iter().zip(&est).enumerate() {
        let Some(g) = g else { bail!("ground-truth pose {i} is null") };
        let model = models.get(&g.class_id).with_context(|| format!("no model for class {}", g.class_id))?;
        let gp = g.to_pose()?;
        let (da, ds, rp) = match e {
            Some(e) => {
                ensure!(e.class_id == g.class_id, "frame {i}: estimate class {} vs ground truth {}", e.class_id, g.class_id);
                let ep = e.to_pose()?;
                (Some(add(&ep, &gp, model)?), Some(add_s(&ep, &gp, model)?), Some(reprojection_error(&ep, &gp, model, &k)?))
            }
            None => (None, None, None),
        };
        let ok = ds.is_some_and(|d| is_correct(d, model, DEFAULT_CORRECT_FRACTION));
        correct += ok as usize;
        csv += &format!("{i},{},{},{},{},{},{}\n", g.class_id, csv_num(da), csv_num(ds), csv_num(rp), ok as u8, a.seed);
        d_add.push(da.unwrap_or(f64::INFINITY));
        d_adds.push(ds.unwrap_or(f64::INFINITY));
    }
    let summary = EvalSummary {
        seed: a.seed,
        frames: gt.len(),
        estimated: est.iter().filter(|e| e.is_some()).count(),
        max_threshold: a.max_threshold,
        auc_add: auc(&accuracy_curve(&d_add, a.max_threshold, DEFAULT_CURVE_STEPS)?),
        auc_adds: auc(&accuracy_curve(&d_adds, a.max_threshold, DEFAULT_CURVE_STEPS)?),
        accuracy_adds: correct as f64 / gt.len() as f64,
    };
    let mut out = Outputs::default();
    if let Some(p) = &a.frames {
        out.file(p, csv.into_bytes());
    }
    out.file_or_stdout(a.out.as_deref(), json_bytes(&summary)?);
    let mut inputs: Vec<&Path> = vec![&a.gt, &a.est];
    inputs.extend(a.intrinsics.as_deref());
    ensure_distinct(&inputs, &out.paths())?;
    out.commit()
}

// ---------------------------------------------------------------- refine

#[derive(Serialize)]
struct RefineOutput {
    seed: u64,
    pose: PoseJson,
    init: PoseJson,
    mean_residual_m: f64,
    inlier_fraction: f64,
    iterations: usize,
    best_hypothesis: usize,
    hypothesis_scores: Vec<Option<f64>>,
    params: IcpParams,
}

pub(crate) fn refine(a: RefineArgs) -> Result<()> {
    let depth = DepthMap::from_tensor(&read_tensor(&a.depth)?)?;
    let labels = LabelMap::from_tensor(&read_tensor(&a.labels)?)?;
    let init_json = read_pose(&a.init)?;
    let init = init_json.to_pose()?;
    let k = read_intrinsics(&a.intrinsics)?;
    let class_id = init_json.class_id;
    let model = a.model.load(class_id)?;
    let params = a.icp.params(a.seed);
    let r = multi_hypothesis_refine(&depth, &labels, class_id, &model, &init, &k, &params)?;
    let output = RefineOutput {
        seed: a.seed,
        pose: PoseJson::from_pose(class_id, &r.best.pose),
        init: init_json,
        mean_residual_m: r.best.mean_residual,
        inlier_fraction: r.best.inlier_fraction,
        iterations: r.best.iterations,
        best_hypothesis: r.best_index,
        hypothesis_scores: r.scores,
        params,
    };
    let mut out = Outputs::default();
    out.file_or_stdout(a.out.as_deref(), json_bytes(&output)?);
    ensure_distinct(&[&a.depth, &a.labels, &a.init, &a.intrinsics], &out.paths())?;
    out.commit()
}

// ---------------------------------------------------------------- pipeline

#[derive(Serialize)]
struct PipelineOutput {
    #[serde(flatten)]
    summary: PipelineSummary,
    noise_preset: String,
    config: PipelineConfig,
}

/// Seven CSV cells `qw..tz`, empty when there is no pose.
fn pose_cells(p: Option<&Pose>) -> String {
    match p {
        Some(p) => {
            let q = p.rotation().to_array();
            let t = p.translation;
            [q[0], q[1], q[2], q[3], t.x, t.y, t.z].iter().map(|&v| sig9(v).to_string()).collect::<Vec<_>>().join(",")
        }
        None => ",,,,,,".into(),
    }
}

pub(crate) fn pipeline(a: PipelineArgs) -> Result<()> {
    let noise = PipelineNoise::preset(&a.noise)?;
    let models = build_registry(&a.model, None)?;
    let config = PipelineConfig {
        scenes: a.scenes,
        seed: a.seed,
        noise,
        refine: a.refine,
        voting: a.voting.params(),
        icp: a.icp.params(0),
        scene: SceneConfig::default(),
        max_threshold: a.max_threshold,
        curve_steps: DEFAULT_CURVE_STEPS,
    };
    let (records, summary) = with_jobs(a.jobs, || run_pipeline(&models, &config))??;
    let mut out = Outputs::default();
    if let Some(p) = &a.frames {
        let mut csv = String::from(
            "scene,instance,class_id,visibility,detected,center_error_px,add_m,add_s_m,add_refined_m,add_s_refined_m,\
             qw,qx,qy,qz,tx_m,ty_m,tz_m,seed\n",
        );
        for r in &records {
            let refined = |v: Option<f64>| if a.refine { csv_num(v) } else { String::new() };
            csv += &format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scene,
                r.instance,
                r.class_id,
                csv_num(Some(r.visibility)),
                r.estimate.is_some() as u8,
                csv_num(r.center_error_px),
                csv_num(r.add),
                csv_num(r.add_s),
                refined(r.add_refined),
                refined(r.add_s_refined),
                pose_cells(if a.refine { r.refined.as_ref() } else { r.estimate.as_ref() }),
                a.seed,
            );
        }
        out.file(p, csv.into_bytes());
    }
    let output = PipelineOutput { summary, noise_preset: a.noise.clone(), config };
    out.file_or_stdout(a.out.as_deref(), json_bytes(&output)?);
    out.commit()
}
