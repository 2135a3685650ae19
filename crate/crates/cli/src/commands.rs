use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use csflow::evaluation::{evaluate, run_ablation, AblationSpec, AblationVariant};
use csflow::feature_pyramid::{generate_synthetic, load_dataset_with, Dataset, LoadOptions, SyntheticConfig};
use csflow::flow::{load_checkpoint, FlowModel};
use csflow::scoring::{
    calibrate_threshold, localize_with, read_scores_file, score_pyramids, score_samples, write_localization_csfp,
    write_pgm, write_scores_file, LocalizationMode,
};
use csflow::training::{train, CheckpointSink, NdjsonSink, ProgressSink};
use csflow::{CsFlowError, Split};
use serde::Serialize;

use crate::args::{AblateArgs, DataArgs, EvalArgs, LocalizeArgs, ScoreArgs, SynthArgs, TrainArgs};
use crate::config::{self, FileConfig};
use crate::error::CliError;

type CmdResult = Result<(), CliError>;

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
}

fn load_data(flags: &DataArgs, file: &FileConfig) -> Result<Dataset, CliError> {
    let choice = config::resolve_data(flags, file)?;
    CliError::require_input(&choice.manifest, "manifest")?;
    let data = load_dataset_with(&choice.manifest, LoadOptions { standardize: choice.standardize })?;
    match choice.class {
        Some(class) => {
            let data = data.filter_class(&class);
            if data.samples.is_empty() {
                return Err(CliError::usage(format!("no samples of class {class:?} in the manifest")));
            }
            Ok(data)
        }
        None => Ok(data),
    }
}

fn load_model(flag: Option<&PathBuf>, file: &FileConfig, data: &Dataset) -> Result<FlowModel, CliError> {
    let path = config::resolve_path(flag, file.checkpoint.as_ref(), "checkpoint")?;
    CliError::require_input(&path, "checkpoint")?;
    let model = load_checkpoint(&path)?;
    model
        .check_signature(&data.signature)
        .map_err(|e| CliError::usage(format!("checkpoint {} does not fit the dataset: {e}", path.display())))?;
    Ok(model)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(CsFlowError::from)?;
    match out {
        Some(path) => {
            let mut f = create_file(path)?;
            writeln!(f, "{text}")?;
            f.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CmdResult {
    let cfg = SyntheticConfig {
        num_normal: args.normals,
        num_test_normal: args.test_normals.unwrap_or(args.normals / 3),
        num_anomalous: args.anomalies,
        num_scales: args.scales,
        channels: args.channels,
        base_height: args.size,
        base_width: args.size,
        anomaly_amplitude: args.amplitude,
        anomaly_radius: args.radius,
        scale_correlation: args.scale_correlation,
        class_name: args.class.clone(),
        seed: args.seed,
    };
    cfg.validate().map_err(CliError::from_config)?;
    create_dir(&args.out)?;
    let manifest = generate_synthetic(&cfg, &args.out)?;
    println!("{}", args.out.join("manifest.toml").display());
    eprintln!("wrote {} samples", manifest.entries.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainRun<'a> {
    flow: &'a csflow::FlowConfig,
    train: &'a csflow::training::TrainConfig,
    manifest: &'a Path,
    train_samples: usize,
}

pub fn train_cmd(args: &TrainArgs, file: &FileConfig) -> CmdResult {
    let data = load_data(&args.data, file)?;
    let flow = config::resolve_flow(&file.flow, &args.flow, &data.signature)?;
    let cfg = config::resolve_train(&file.train, &args.optim)?;
    let out = config::resolve_path(args.out.as_ref(), file.output_dir.as_ref(), "output directory (--out)")?;
    create_dir(&out)?;
    let train_set = data.train_pyramids();
    if train_set.is_empty() {
        return Err(CliError::usage("manifest has no train-split samples"));
    }
    let manifest = config::resolve_data(&args.data, file)?.manifest;
    write_json(
        &TrainRun { flow: &flow, train: &cfg, manifest: &manifest, train_samples: train_set.len() },
        Some(&out.join("run.json")),
    )?;

    let progress = create_file(&out.join("progress.ndjson"))?;
    let checkpoints = CheckpointSink::new(&out, args.checkpoint_every.or(file.checkpoint_every))?;
    let final_path = checkpoints.final_path();
    let mut sinks: Vec<Box<dyn ProgressSink>> = vec![Box::new(NdjsonSink::new(progress)), Box::new(checkpoints)];
    let model = FlowModel::build(flow)?;
    let state = train(model, &train_set, &cfg, &mut sinks)?;
    let h = state.history.mean_nll();
    eprintln!(
        "trained on {} samples for {} epochs: mean nll {:.6} -> {:.6}",
        state.history.sample_indices.len(),
        h.len(),
        h[0],
        h[h.len() - 1]
    );
    println!("{}", final_path.display());
    Ok(())
}

pub fn score(args: &ScoreArgs, file: &FileConfig) -> CmdResult {
    let data = load_data(&args.data, file)?;
    let model = load_model(args.checkpoint.as_ref(), file, &data)?;
    let mode = config::resolve_mode(args.mode.as_deref(), file)?;
    let q = config::resolve_quantile(args.quantile, file)?;
    let split = match args.split.as_str() {
        "test" => Split::Test,
        "train" => Split::Train,
        other => return Err(CliError::usage(format!("unknown split {other:?} (expected test or train)"))),
    };
    let samples: Vec<_> = data.split(split).collect();
    let records = score_samples(&model, &samples, mode)?;
    write_scores_file(&records, &args.out)?;
    eprintln!("scored {} samples ({mode})", records.len());
    let train_set = data.train_pyramids();
    if !train_set.is_empty() {
        let train_scores: Vec<f64> = score_pyramids(&model, &train_set, mode)?.iter().map(|r| r.score).collect();
        let t = calibrate_threshold(&train_scores, q)?;
        println!("{}", serde_json::to_string(&t).map_err(CsFlowError::from)?);
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    CliError::require_input(&args.scores, "scores file")?;
    let records = read_scores_file(&args.scores)?;
    let report = evaluate(&records, args.bins, args.clip_max)?;
    if let Some(path) = &args.roc_csv {
        report.write_roc_csv(create_file(path)?)?;
    }
    if let Some(path) = &args.histogram_csv {
        report.write_histogram_csv(create_file(path)?)?;
    }
    write_json(&report, args.out.as_deref())?;
    eprintln!("auroc {:.6}", report.auroc);
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::usage(format!("size must look like HEIGHTxWIDTH, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (h, w) = (h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?);
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

pub fn localize(args: &LocalizeArgs, file: &FileConfig) -> CmdResult {
    let data = load_data(&args.data, file)?;
    let model = load_model(args.checkpoint.as_ref(), file, &data)?;
    let target = match &args.size {
        Some(s) => parse_size(s)?,
        None => data.signature.dims[0],
    };
    let mode = if args.all_scales { LocalizationMode::AllScales } else { LocalizationMode::Finest };
    let chosen: Vec<_> = if args.samples.is_empty() {
        data.test_samples()
    } else {
        args.samples
            .iter()
            .map(|id| {
                data.samples
                    .iter()
                    .find(|s| s.entry.sample_id == *id)
                    .ok_or_else(|| CliError::usage(format!("unknown sample id {id:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    create_dir(&args.out)?;
    for s in chosen {
        let map = localize_with(&model, &s.pyramid, Some(target), mode)?;
        let full = map.full.as_ref().expect("target size requested");
        let stem = file_stem(&s.entry.sample_id);
        write_localization_csfp(full, create_file(&args.out.join(format!("{stem}.csfp")))?)?;
        write_pgm(full, create_file(&args.out.join(format!("{stem}.pgm")))?)?;
        let (r, c) = map.argmax();
        println!("{}\t{}\t{r}\t{c}", s.entry.sample_id, s.label);
    }
    Ok(())
}

pub fn ablate(args: &AblateArgs, file: &FileConfig) -> CmdResult {
    let data = load_data(&args.data, file)?;
    let flow = config::resolve_flow(&file.flow, &args.flow, &data.signature)?;
    let cfg = config::resolve_train(&file.train, &args.optim)?;
    let mut spec = AblationSpec::all_variants(data.signature.num_scales());
    if let Some(names) = &args.variants {
        spec.variants = names
            .iter()
            .map(|n| n.parse::<AblationVariant>())
            .collect::<Result<_, _>>()
            .map_err(CliError::from_config)?;
    }
    spec.block_counts = args.block_sweep.clone().unwrap_or_default();
    spec.score_mode = config::resolve_mode(args.mode.as_deref(), file)?;
    spec.validate(data.signature.num_scales()).map_err(CliError::from_config)?;
    let report = run_ablation(&spec, &data, &cfg, &flow)?;
    for row in report.variants.iter().chain(&report.block_sweep) {
        eprintln!("{:<22} blocks {:>2}  auroc {:.4}", row.variant, row.num_blocks, row.auroc);
    }
    write_json(&report, args.out.as_deref())
}
