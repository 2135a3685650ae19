//! Stream progress as NDJSON, save periodic checkpoints, and restore the
//! final one.

use std::fs;

use csflow::feature_pyramid::{generate_synthetic, load_dataset, SyntheticConfig};
use csflow::flow::{load_checkpoint, FlowConfig, FlowModel};
use csflow::scoring::{score_pyramids, ScoreMode};
use csflow::training::{train, CheckpointSink, NdjsonSink, ProgressSink, TrainConfig};

fn main() -> csflow::Result<()> {
    let dir = std::env::temp_dir().join("csflow-checkpoints");
    let synth = SyntheticConfig { channels: 4, base_height: 8, base_width: 8, ..SyntheticConfig::default() };
    generate_synthetic(&synth, dir.join("data"))?;
    let data = load_dataset(dir.join("data/manifest.toml"))?;

    let ckpt = CheckpointSink::new(dir.join("run"), Some(2))?;
    let final_path = ckpt.final_path();
    let mut sinks: Vec<Box<dyn ProgressSink>> = vec![Box::new(NdjsonSink::new(std::io::stdout())), Box::new(ckpt)];
    let cfg = TrainConfig { epochs: 6, ..TrainConfig::default() };
    let state =
        train(FlowModel::build(FlowConfig::for_signature(&data.signature))?, &data.train_pyramids(), &cfg, &mut sinks)?;

    let mut files: Vec<_> =
        fs::read_dir(dir.join("run"))?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
    files.sort();
    println!("checkpoints: {files:?}");

    let restored = load_checkpoint(&final_path)?;
    let train_set = data.train_pyramids();
    let a = score_pyramids(&state.model, &train_set[..4], ScoreMode::Nll)?;
    let b = score_pyramids(&restored, &train_set[..4], ScoreMode::Nll)?;
    let same = a.iter().zip(&b).all(|(x, y)| x.score.to_bits() == y.score.to_bits());
    println!("restored model scores identically: {same}");
    Ok(())
}
