use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "headsplat", version, about = "Mesh-bound Gaussian head avatars", args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice a subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic data sets.
    Synth(SynthArgs),
    /// Fit an avatar (and optionally head parameters) to a frame directory.
    Fit(FitArgs),
    /// Render an avatar or a plain PLY scene to a PNG.
    Render(RenderArgs),
    /// Train the audio-to-parameter model.
    #[command(name = "train-a2p")]
    TrainA2p(TrainA2pArgs),
    /// Drive an avatar from audio features.
    Animate(AnimateArgs),
    /// Score keypoint trajectories for temporal stability.
    Stability(StabilityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthCase {
    /// Talking synthetic speaker: head rig, avatar, audio, params and frames.
    Identity,
    /// Static multi-view captures of a small avatar plus a perturbed start.
    Multiview,
    /// Keypoint clip with sinusoidal jitter of `--amplitude` pixels.
    Wobble,
    /// Audio features only.
    Features,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub case: SynthCase,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Jitter amplitude in pixels (wobble).
    #[arg(long, default_value_t = 0.0)]
    pub amplitude: f64,
    /// Number of frames (identity, wobble, features).
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Camera count (multiview).
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    /// Keypoints per frame (wobble).
    #[arg(long, default_value_t = 5)]
    pub keypoints: usize,
    /// Audio feature width.
    #[arg(long, default_value_t = 29)]
    pub audio_dim: usize,
    /// Gaussians added on top of one per triangle.
    #[arg(long)]
    pub extra_gaussians: Option<usize>,
    /// Relative perturbation of the multiview starting avatar.
    #[arg(long, default_value_t = 0.05)]
    pub perturb: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FitArgs {
    /// Frame directory with a manifest.json.
    #[arg(long)]
    pub frames: PathBuf,
    /// Identity template (OBJ).
    #[arg(long)]
    pub template: PathBuf,
    /// Blendshape basis.
    #[arg(long)]
    pub basis: PathBuf,
    /// Output avatar PLY; a `.binding.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Starting avatar; defaults to one Gaussian per template triangle.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Full fit configuration as JSON; the flags below override it.
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub lambda_ssim: Option<f64>,
    /// Multiply every learning rate.
    #[arg(long)]
    pub lr_scale: Option<f64>,
    /// Keep head parameters fixed at their tracked values.
    #[arg(long)]
    pub no_head_param_opt: bool,
    #[arg(long)]
    pub no_densify: bool,
    #[arg(long)]
    pub densify_interval: Option<usize>,
    #[arg(long)]
    pub densify_start: Option<usize>,
    #[arg(long)]
    pub densify_stop: Option<usize>,
    #[arg(long)]
    pub head_fd_step: Option<f64>,
    /// SH degree of the default starting avatar.
    #[arg(long, default_value_t = 1)]
    pub sh_degree: usize,
    /// Background as r,g,b in [0, 1].
    #[arg(long)]
    pub background: Option<String>,
    /// Loss curve CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Refined head parameters; defaults to `<out>.params.bin`.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct RenderArgs {
    /// Avatar PLY. With `--template` and `--basis` it is posed through its
    /// binding sidecar; otherwise the PLY Gaussians are drawn as stored.
    #[arg(long)]
    pub avatar: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires = "basis")]
    pub template: Option<PathBuf>,
    #[arg(long, requires = "template")]
    pub basis: Option<PathBuf>,
    /// Head parameter sequence; neutral when absent.
    #[arg(long, requires = "template")]
    pub params: Option<PathBuf>,
    /// Row of `--params` to render.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long)]
    pub background: Option<String>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainA2pArgs {
    /// Audio features, one file per training sequence.
    #[arg(long, required = true)]
    pub features: Vec<PathBuf>,
    /// Tracked head parameters, one file per sequence.
    #[arg(long, required = true)]
    pub gt_params: Vec<PathBuf>,
    /// Identity templates, one per sequence or a single shared one.
    #[arg(long, required = true)]
    pub template: Vec<PathBuf>,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Mesh the style encoder is centered on; defaults to the mean of the
    /// training templates.
    #[arg(long)]
    pub mean_head: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub model_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Feed-forward width; defaults to twice the model width.
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub style_hidden: usize,
    /// Positional encoding period in frames.
    #[arg(long, default_value_t = 30)]
    pub period: usize,
    /// Training loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AnimateArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub avatar: PathBuf,
    #[arg(long)]
    pub audio_features: PathBuf,
    /// Head parameters supplying pose, translation and shape.
    #[arg(long)]
    pub ref_motion: PathBuf,
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Output frame directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Drive only the jaw; pose frozen, expression zero.
    #[arg(long)]
    pub lip_only: bool,
    #[arg(long)]
    pub background: Option<String>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct StabilityArgs {
    /// Generated trajectory CSV.
    #[arg(long, required_unless_present = "gen_frames", conflicts_with = "gen_frames")]
    pub gen: Option<PathBuf>,
    /// Ground-truth trajectory CSV.
    #[arg(long, conflicts_with_all = ["gt_frames", "no_gt"])]
    pub gt: Option<PathBuf>,
    /// Generated frame directory, tracked inside `--roi`.
    #[arg(long, requires = "roi")]
    pub gen_frames: Option<PathBuf>,
    /// Ground-truth frame directory, tracked inside `--roi`.
    #[arg(long, requires = "roi", conflicts_with = "no_gt")]
    pub gt_frames: Option<PathBuf>,
    /// Tracking window as x,y,width,height in pixels.
    #[arg(long)]
    pub roi: Option<String>,
    /// Frame rate of frame directories without one in their manifest.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Compare against a moving average of the generated trajectory.
    #[arg(long)]
    pub no_gt: bool,
    /// High-frequency cutoff as a fraction of Nyquist.
    #[arg(long, default_value_t = headsplat::stability::DEFAULT_CUTOFF_FRACTION)]
    pub cutoff: f64,
    /// Skip removing the linear trend before the spectrum.
    #[arg(long)]
    pub no_detrend: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the tracked trajectories as CSV into this directory.
    #[arg(long)]
    pub trajectories_out: Option<PathBuf>,
}
