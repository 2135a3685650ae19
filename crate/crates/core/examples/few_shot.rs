//! Train with only a handful of normal samples and watch detection
//! quality as the shot count grows.
//!
//! ```text
//! cargo run --example few_shot -- [epochs]
//! ```

use csflow::evaluation::{auroc, labeled_scores};
use csflow::feature_pyramid::{generate_synthetic, load_dataset, SyntheticConfig};
use csflow::flow::{FlowConfig, FlowModel};
use csflow::scoring::{score_samples, ScoreMode};
use csflow::training::{train, NullSink, TrainConfig};

fn main() -> csflow::Result<()> {
    let epochs = std::env::args().nth(1).map_or(20, |a| a.parse().expect("epochs"));
    let dir = std::env::temp_dir().join("csflow-few-shot");
    let synth = SyntheticConfig { anomaly_amplitude: 3.0, ..SyntheticConfig::default() };
    generate_synthetic(&synth, &dir)?;
    let data = load_dataset(dir.join("manifest.toml"))?;
    let train_set = data.train_pyramids();
    let test = data.test_samples();

    for shots in [1, 2, 4, 8, 16, 64] {
        let cfg = TrainConfig { epochs, shot_limit: Some(shots), ..TrainConfig::default() };
        let model = FlowModel::build(FlowConfig::for_signature(&data.signature))?;
        let state = train(model, &train_set, &cfg, &mut NullSink)?;
        let recs = score_samples(&state.model, &test, ScoreMode::Nll)?;
        println!(
            "{shots:>3} shots (samples {:?}...): AUROC {:.4}",
            &state.history.sample_indices[..shots.min(4)],
            auroc(&labeled_scores(&recs)?)?
        );
    }
    Ok(())
}
