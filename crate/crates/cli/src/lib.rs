//! `centerpose` command line: synthetic data, voting, losses, metrics, ICP
//! and the end-to-end pipeline.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use centerpose_core::losses::{LossKind, DEFAULT_LEARNING_RATE, DEFAULT_STEPS};
use centerpose_core::metrics::DEFAULT_MAX_THRESHOLD;
use centerpose_core::refine::IcpParams;
use centerpose_core::voting::VotingParams;

mod commands;
pub mod io;

use io::ModelArg;

#[derive(Debug, Parser)]
#[command(name = "centerpose", version, about = "Center-voting 6D pose estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render scenes into label, center-field and depth tensors plus ground truth.
    Synth(SynthArgs),
    /// Detect object centers and translations from label and field tensors.
    Vote(VoteArgs),
    /// Evaluate a rotation loss and its gradient between two poses.
    Loss(LossArgs),
    /// Optimize rotations from random starts and emit final angle errors as CSV.
    Histogram(HistogramArgs),
    /// Score estimated poses against ground truth with ADD and ADD-S.
    Eval(EvalArgs),
    /// Refine a pose against a depth map with multi-hypothesis ICP.
    Refine(RefineArgs),
    /// Run synth, perturb, detect, optional refine and eval over random scenes.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
struct VotingFlags {
    /// Minimum peak score; default max(10, 10% of the class pixels).
    #[arg(long)]
    score_threshold: Option<u32>,
    #[arg(long, default_value_t = 20)]
    nms_radius: u32,
    /// Inlier ray distance, pixels.
    #[arg(long, default_value_t = 3.0)]
    inlier_eps: f64,
}

impl VotingFlags {
    fn params(&self) -> VotingParams {
        VotingParams {
            score_threshold: self.score_threshold,
            nms_radius: self.nms_radius,
            inlier_ray_distance: self.inlier_eps,
            ..VotingParams::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
struct IcpFlags {
    #[arg(long, default_value_t = 100)]
    icp_iters: usize,
    /// Residual rejection threshold, meters.
    #[arg(long, default_value_t = 0.02)]
    icp_reject: f64,
    #[arg(long, default_value_t = 8)]
    hypotheses: usize,
}

impl IcpFlags {
    fn params(&self, seed: u64) -> IcpParams {
        IcpParams {
            max_iterations: self.icp_iters,
            residual_reject_threshold: self.icp_reject,
            n_hypotheses: self.hypotheses,
            rng_seed: seed,
            ..IcpParams::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
struct NoiseFlags {
    /// Direction jitter, radians.
    #[arg(long, default_value_t = 0.0)]
    direction_sigma: f64,
    /// Per-pixel depth noise, meters.
    #[arg(long, default_value_t = 0.0)]
    depth_sigma: f64,
    /// Per-class depth offset noise, meters.
    #[arg(long, default_value_t = 0.0)]
    depth_bias_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    label_flip_rate: f64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["scene", "random"]))]
struct SynthArgs {
    /// Scene description JSON.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Number of random scenes to generate.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; one `scene_NNNN` subdirectory per scene.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Model override, `[CLASS=]PLY` or a primitive name (repeatable).
    #[arg(long)]
    model: Vec<ModelArg>,
    #[command(flatten)]
    noise: NoiseFlags,
    /// Random scenes must contain an instance whose center pixel is occluded.
    #[arg(long)]
    occluded_center: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct VoteArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[command(flatten)]
    voting: VotingFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Detections JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long)]
    model: ModelArg,
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "sloss")]
    kind: LossKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HistogramArgs {
    #[arg(long)]
    model: ModelArg,
    #[arg(long, default_value = "sloss")]
    kind: LossKind,
    #[arg(long, default_value_t = 200)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Learning rate, scaled by 1 / diameter^2.
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    /// Ground-truth pose; identity when omitted.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Further ground-truth labels equivalent to `--gt` (repeatable).
    #[arg(long)]
    extra_label: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    est: PathBuf,
    /// Model override, `[CLASS=]PLY` or a primitive name (repeatable).
    #[arg(long)]
    model: Vec<ModelArg>,
    /// Intrinsics for the reprojection error.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// AUC cap, meters.
    #[arg(long, default_value_t = DEFAULT_MAX_THRESHOLD)]
    max_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-frame CSV output.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Summary JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    model: ModelArg,
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[command(flatten)]
    icp: IcpFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise preset: none or moderate.
    #[arg(long, default_value = "none")]
    noise: String,
    #[arg(long)]
    refine: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    voting: VotingFlags,
    #[command(flatten)]
    icp: IcpFlags,
    /// AUC cap, meters.
    #[arg(long, default_value_t = DEFAULT_MAX_THRESHOLD)]
    max_threshold: f64,
    /// Model override, `CLASS=PLY` or `CLASS=primitive` (repeatable).
    #[arg(long)]
    model: Vec<ModelArg>,
    /// Per-instance CSV output.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Summary JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the subcommand.
///
/// Returns 0 on success, 2 on usage errors and 1 on any other failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Vote(a) => commands::vote(a),
        Command::Loss(a) => commands::loss(a),
        Command::Histogram(a) => commands::histogram(a),
        Command::Eval(a) => commands::eval(a),
        Command::Refine(a) => commands::refine(a),
        Command::Pipeline(a) => commands::pipeline(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
