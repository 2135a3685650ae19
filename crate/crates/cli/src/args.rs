use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "csflow", version, about = "Cross-scale normalizing flows for defect detection")]
pub struct Cli {
    /// Worker threads (default: hardware parallelism).
    #[arg(long, global = true, env = "CSFLOW_THREADS")]
    pub threads: Option<usize>,

    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature-pyramid dataset.
    Synth(SynthArgs),
    /// Train a flow on the train split of a manifest.
    Train(TrainArgs),
    /// Score samples of a manifest with a trained checkpoint.
    Score(ScoreArgs),
    /// Compute AUROC, ROC curve and histogram from a scores CSV.
    Eval(EvalArgs),
    /// Write localization maps for test samples.
    Localize(LocalizeArgs),
    /// Compare scale strategies and block counts.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the manifest and sample files.
    #[arg(long)]
    pub out: PathBuf,
    /// Total normal samples (train and test).
    #[arg(long, default_value_t = 96)]
    pub normals: usize,
    /// Normal samples placed in the test split (default: a third of the normals).
    #[arg(long)]
    pub test_normals: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub anomalies: usize,
    #[arg(long, default_value_t = 2)]
    pub scales: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Finest-scale height and width.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    /// Bump peak in units of the field standard deviation.
    #[arg(long, default_value_t = 5.0)]
    pub amplitude: f64,
    /// Bump radius in finest-scale pixels.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.7)]
    pub scale_correlation: f64,
    #[arg(long, default_value = "synthetic")]
    pub class: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Default, Clone)]
pub struct DataArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Restrict to one class of a multi-class manifest.
    #[arg(long)]
    pub class: Option<String>,
    /// Standardize channels with train-split statistics.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args, Default, Clone)]
pub struct FlowArgs {
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Comma-separated odd kernel sizes, one per block.
    #[arg(long, value_delimiter = ',')]
    pub kernel_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub clamp_alpha: Option<f64>,
    #[arg(long)]
    pub hidden_factor: Option<usize>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    /// Use the first block coefficient in the second affine exponent.
    #[arg(long)]
    pub shared_first_gamma: bool,
    /// Seed for permutations and weight initialization.
    #[arg(long)]
    pub model_seed: Option<u64>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct OptimArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Train on this many randomly chosen samples.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Seed for shuffling and shot selection.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flow: FlowArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Output directory for checkpoints and the progress log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also save a checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Trained checkpoint (.csfc).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Scores CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// nll or z_energy.
    #[arg(long)]
    pub mode: Option<String>,
    /// Split to score: test or train.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Train-normal quantile for the reported decision threshold.
    #[arg(long)]
    pub quantile: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores CSV with labels.
    #[arg(long)]
    pub scores: PathBuf,
    /// Metrics JSON to write (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Histogram upper edge; larger scores land in the last bin.
    #[arg(long)]
    pub clip_max: Option<f64>,
    #[arg(long)]
    pub roc_csv: Option<PathBuf>,
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Trained checkpoint (.csfc).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for map files.
    #[arg(long)]
    pub out: PathBuf,
    /// Sample ids to localize (default: every test sample).
    #[arg(long = "sample")]
    pub samples: Vec<String>,
    /// Target size as HEIGHTxWIDTH (default: finest scale size).
    #[arg(long)]
    pub size: Option<String>,
    /// Sum maps of all scales instead of the finest only.
    #[arg(long)]
    pub all_scales: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flow: FlowArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Report JSON to write (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated variants (default: all). Names: cross_scale,
    /// single_scale_<i>, separate, concat.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Comma-separated block counts for a cross-scale sweep.
    #[arg(long, value_delimiter = ',')]
    pub block_sweep: Option<Vec<usize>>,
    #[arg(long)]
    pub mode: Option<String>,
}
