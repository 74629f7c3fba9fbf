//! Command line surface. Heavy lifting lives in `commands`.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use stillflow::features::LabelKind;

#[derive(Parser, Debug)]
#[command(
    name = "stillflow",
    version,
    about = "Predict dense motion from single still frames with structured regression forests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a forest (one per class label found in the manifest)
    Train(TrainArgs),
    /// Predict dense motion for one image and write it as .flo
    Predict(PredictArgs),
    /// Score a prediction or a model against reference flow at edge pixels
    Eval(EvalArgs),
    /// Flag frames whose measured flow disagrees with the model's prediction
    DetectUnexpected(DetectArgs),
    /// Group grid locations by predicted motion and aggregate descriptors per pool
    Pool(PoolArgs),
    /// Generate a synthetic corpus of textured shapes with exact ground-truth flow
    Synth(SynthArgs),
    /// Warp an image along a flow field
    Warp(WarpArgs),
    /// Render a .flo file with the standard color wheel
    Flow2png(Flow2PngArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum LabelArg {
    /// Two-component labels: the flow vectors themselves
    Flow,
    /// Four-component labels: the flow's spatial derivatives
    Derivatives,
}

impl From<LabelArg> for LabelKind {
    fn from(value: LabelArg) -> Self {
        match value {
            LabelArg::Flow => LabelKind::Flow,
            LabelArg::Derivatives => LabelKind::FlowDerivatives,
        }
    }
}

/// Canny flags shared by every command that picks edge pixels.
#[derive(clap::Args, Debug, Clone, Copy)]
pub struct CannyArgs {
    /// Gaussian smoothing sigma before edge detection
    #[arg(long, default_value_t = 1.4)]
    pub canny_sigma: f64,
    /// Hysteresis low threshold on gradient magnitude
    #[arg(long, default_value_t = 0.1)]
    pub canny_low: f64,
    /// Hysteresis high threshold on gradient magnitude
    #[arg(long, default_value_t = 0.2)]
    pub canny_high: f64,
}

impl CannyArgs {
    pub fn to_params(self) -> stillflow::CannyParams {
        stillflow::CannyParams {
            sigma: self.canny_sigma,
            low: self.canny_low,
            high: self.canny_high,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Corpus manifest: tab-separated `frame flow [next [class]]`, `#` comments
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output model path; per-class models insert the class before the extension
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file mirroring the forest configuration fields
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Number of trees in the ensemble
    #[arg(long)]
    pub trees: Option<usize>,
    /// Leaf budget per tree
    #[arg(long)]
    pub max_leaves: Option<usize>,
    /// Nodes below this variance become leaves
    #[arg(long)]
    pub var_threshold: Option<f64>,
    /// Random split candidates evaluated per node
    #[arg(long)]
    pub split_candidates: Option<usize>,
    /// Random thresholds evaluated per candidate
    #[arg(long)]
    pub thresholds_per_candidate: Option<usize>,
    /// Frame pairs drawn (without replacement) per tree
    #[arg(long)]
    pub pairs_per_tree: Option<usize>,
    /// Minimum samples on each side of a split
    #[arg(long)]
    pub min_child: Option<usize>,
    /// Seed for sampling and training; overrides the config file
    #[arg(long)]
    pub seed: Option<u64>,

    /// Patch side length (odd); defaults to a fifth of the larger image side
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Grid spacing between candidate patch centers
    #[arg(long, default_value_t = 1)]
    pub sample_stride: usize,
    /// Cap on training patches drawn per frame
    #[arg(long, default_value_t = 500)]
    pub max_per_frame: usize,
    /// What the leaves predict
    #[arg(long, value_enum, default_value_t = LabelArg::Flow)]
    pub label: LabelArg,
    #[command(flatten)]
    pub canny: CannyArgs,
}

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    /// Model file; repeat for per-class models (outputs then carry the model stem)
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Input image (PNG/PNM; grayscale accepted)
    #[arg(long)]
    pub image: PathBuf,
    /// Output .flo; derivative models write `<stem>.du.flo` and `<stem>.dv.flo`
    #[arg(long)]
    pub out: PathBuf,
    /// Also render the predicted flow with the color wheel to this PNG
    #[arg(long)]
    pub color: Option<PathBuf>,
    /// Color-wheel normalization magnitude; default is the field's own maximum
    #[arg(long)]
    pub max_flow: Option<f64>,
    /// Comma-separated warp magnitudes; each writes `<out stem>.warp-<step>.png`
    #[arg(long, value_delimiter = ',')]
    pub warp_steps: Vec<f64>,
    /// Spacing between prediction patch centers
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Prediction: a .flo file or a trained model (recognized by file magic)
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference .flo (single-shot mode)
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Image whose edges pick the evaluation pixels (single-shot mode)
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Batch mode: score a model over every (frame, flow) row of a manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Prediction stride when `--pred` is a model
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Print the report as JSON instead of a table
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub canny: CannyArgs,
}

#[derive(clap::Args, Debug)]
pub struct DetectArgs {
    /// Trained flow model
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest of consecutive frames, each with its measured flow
    #[arg(long)]
    pub manifest: PathBuf,
    /// Prediction stride
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Downscale inputs so the longer side is at most this many pixels
    #[arg(long, default_value_t = 300)]
    pub max_dim: usize,
    /// Write per-frame |predicted - measured| heatmap PNGs into this directory
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
    /// Print the report as JSON instead of a table
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub canny: CannyArgs,
}

#[derive(clap::Args, Debug)]
pub struct PoolArgs {
    /// Trained flow model
    #[arg(long)]
    pub model: PathBuf,
    /// Input image
    #[arg(long)]
    pub image: PathBuf,
    /// Grid spacing in pixels between pooled locations
    #[arg(long, default_value_t = 8)]
    pub grid_stride: usize,
    /// Spacing between prediction patch centers
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Write per-pool aggregated descriptors as JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a color-coded pool map PNG here
    #[arg(long)]
    pub viz: Option<PathBuf>,
    /// Magnitude separating the two bands; default is the median nonzero magnitude
    #[arg(long)]
    pub band_split: Option<f64>,
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    /// Total frame pairs; classes take turns
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    /// Texture classes as name=du,dv with whole-pixel motion; repeatable.
    /// Names starting with "checker" tile a checkerboard, "stripes" diagonal bands.
    #[arg(long = "class", value_name = "NAME=DU,DV")]
    pub classes: Vec<String>,
    /// Shapes stay at least this far from every border in both frames
    #[arg(long, default_value_t = 12)]
    pub margin: usize,
    /// Texture cell size in pixels
    #[arg(long, default_value_t = 6)]
    pub cell: usize,
}

#[derive(clap::Args, Debug)]
pub struct WarpArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub flow: PathBuf,
    /// Warp magnitudes; with several, outputs become `<stem>.step-<s>.png`
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub steps: Vec<f64>,
    /// Output PNG
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct Flow2PngArgs {
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Normalization magnitude; default is the field's own maximum
    #[arg(long)]
    pub max_flow: Option<f64>,
}
