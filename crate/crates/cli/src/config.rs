//! Run configuration file and flag merging.
//!
//! Every setting resolves as command-line flag, then config file, then the
//! library default. Relative paths in the file are taken relative to the
//! file's directory.
//!
//! ```toml
//! manifest = "data/manifest.toml"
//! checkpoint = "run/final.csfc"
//! output_dir = "run"
//! class = "synthetic"
//! standardize = false
//! score_mode = "nll"          # or "z_energy"
//! quantile = 0.95
//! threads = 8
//! checkpoint_every = 10
//!
//! [flow]
//! num_blocks = 4
//! kernel_sizes = [3, 3, 3, 5]
//! clamp_alpha = 3.0
//! hidden_channel_factor = 2
//! leaky_slope = 0.1
//! shared_first_gamma = false
//! seed = 0
//!
//! [train]
//! learning_rate = 2e-4
//! weight_decay = 1e-5
//! adam_beta1 = 0.5
//! adam_beta2 = 0.9
//! batch_size = 16
//! epochs = 240
//! grad_clip_norm = 1.0
//! shot_limit = 16
//! seed = 0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use csflow::feature_pyramid::ShapeSignature;
use csflow::flow::FlowConfig;
use csflow::scoring::{ScoreMode, DEFAULT_QUANTILE};
use csflow::training::TrainConfig;
use serde::Deserialize;

use crate::args::{DataArgs, FlowArgs, OptimArgs};
use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub class: Option<String>,
    pub standardize: Option<bool>,
    pub score_mode: Option<String>,
    pub quantile: Option<f64>,
    pub threads: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub flow: FlowSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub num_blocks: Option<usize>,
    pub kernel_sizes: Option<Vec<usize>>,
    pub clamp_alpha: Option<f64>,
    pub hidden_channel_factor: Option<usize>,
    pub leaky_slope: Option<f64>,
    pub shared_first_gamma: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub grad_clip_norm: Option<f64>,
    pub shot_limit: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.checkpoint, &mut cfg.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

pub fn resolve_flow(file: &FlowSection, flags: &FlowArgs, sig: &ShapeSignature) -> Result<FlowConfig, CliError> {
    let mut cfg = FlowConfig::for_signature(sig);
    let blocks = flags.blocks.or(file.num_blocks);
    let kernels = flags.kernel_sizes.clone().or_else(|| file.kernel_sizes.clone());
    match (blocks, kernels) {
        (Some(n), Some(k)) if n != k.len() => {
            return Err(CliError::usage(format!("{n} blocks but {} kernel sizes", k.len())));
        }
        (_, Some(k)) => cfg = cfg.with_kernel_sizes(k),
        (Some(n), None) => cfg = cfg.with_blocks(n),
        (None, None) => {}
    }
    if let Some(v) = flags.clamp_alpha.or(file.clamp_alpha) {
        cfg.clamp_alpha = v;
    }
    if let Some(v) = flags.hidden_factor.or(file.hidden_channel_factor) {
        cfg.hidden_channel_factor = v;
    }
    if let Some(v) = flags.leaky_slope.or(file.leaky_slope) {
        cfg.leaky_slope = v;
    }
    cfg.shared_first_gamma = flags.shared_first_gamma || file.shared_first_gamma.unwrap_or(false);
    if let Some(v) = flags.model_seed.or(file.seed) {
        cfg.seed = v;
    }
    cfg.validate().map_err(CliError::from_config)?;
    Ok(cfg)
}

pub fn resolve_train(file: &TrainSection, flags: &OptimArgs) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: flags.lr.or(file.learning_rate).unwrap_or(d.learning_rate),
        weight_decay: flags.weight_decay.or(file.weight_decay).unwrap_or(d.weight_decay),
        adam_beta1: flags.beta1.or(file.adam_beta1).unwrap_or(d.adam_beta1),
        adam_beta2: flags.beta2.or(file.adam_beta2).unwrap_or(d.adam_beta2),
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        epochs: flags.epochs.or(file.epochs).unwrap_or(d.epochs),
        grad_clip_norm: flags.grad_clip.or(file.grad_clip_norm).unwrap_or(d.grad_clip_norm),
        shot_limit: flags.shots.or(file.shot_limit),
        seed: flags.seed.or(file.seed).unwrap_or(d.seed),
        ..d
    };
    cfg.validate().map_err(CliError::from_config)?;
    Ok(cfg)
}

pub fn resolve_mode(flag: Option<&str>, file: &FileConfig) -> Result<ScoreMode, CliError> {
    match flag.or(file.score_mode.as_deref()) {
        Some(s) => s.parse().map_err(CliError::from_config),
        None => Ok(ScoreMode::default()),
    }
}

pub fn resolve_quantile(flag: Option<f64>, file: &FileConfig) -> Result<f64, CliError> {
    let q = flag.or(file.quantile).unwrap_or(DEFAULT_QUANTILE);
    if q > 0.0 && q < 1.0 {
        Ok(q)
    } else {
        Err(CliError::usage(format!("quantile must lie in (0, 1), got {q}")))
    }
}

/// Resolved dataset selection.
pub struct DataChoice {
    pub manifest: PathBuf,
    pub class: Option<String>,
    pub standardize: bool,
}

pub fn resolve_data(flags: &DataArgs, file: &FileConfig) -> Result<DataChoice, CliError> {
    let manifest = flags
        .manifest
        .clone()
        .or_else(|| file.manifest.clone())
        .ok_or_else(|| CliError::usage("no manifest given (use --manifest or the config file)"))?;
    Ok(DataChoice {
        manifest,
        class: flags.class.clone().or_else(|| file.class.clone()),
        standardize: flags.standardize || file.standardize.unwrap_or(false),
    })
}

pub fn resolve_path(flag: Option<&PathBuf>, file: Option<&PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.or(file).cloned().ok_or_else(|| CliError::usage(format!("no {what} given")))
}
