//! Train on the normal split of a synthetic dataset, then score and
//! localize the test split.
//!
//! ```text
//! cargo run --example train_and_score -- [epochs] [learning_rate]
//! ```

use std::time::Instant;

use csflow::evaluation::{auroc, labeled_scores};
use csflow::feature_pyramid::{generate_synthetic, load_dataset, SyntheticConfig};
use csflow::flow::{FlowConfig, FlowModel};
use csflow::scoring::{calibrate_threshold, decide, localize, score_pyramids, score_samples, ScoreMode};
use csflow::training::{train, NullSink, TrainConfig};

fn main() -> csflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(30, |a| a.parse().expect("epochs"));
    let lr = args.next().map_or(2e-4, |a| a.parse().expect("learning rate"));

    let dir = std::env::temp_dir().join("csflow-train-and-score");
    generate_synthetic(&SyntheticConfig::default(), &dir)?;
    let data = load_dataset(dir.join("manifest.toml"))?;
    println!("dataset {}: {} samples", data.signature, data.samples.len());

    let model = FlowModel::build(FlowConfig::for_signature(&data.signature))?;
    let cfg = TrainConfig { epochs, learning_rate: lr, ..TrainConfig::default() };
    let t = Instant::now();
    let train_set = data.train_pyramids();
    let state = train(model, &train_set, &cfg, &mut NullSink)?;
    let h = state.history.mean_nll();
    println!(
        "trained {} params for {epochs} epochs in {:.1}s: nll {:.4} -> {:.4}",
        state.model.num_parameters(),
        t.elapsed().as_secs_f64(),
        h[0],
        h[h.len() - 1]
    );

    let test = data.test_samples();
    for mode in [ScoreMode::Nll, ScoreMode::ZEnergy] {
        let recs = score_samples(&state.model, &test, mode)?;
        println!("{mode}: test AUROC {:.4}", auroc(&labeled_scores(&recs)?)?);
    }

    let train_scores: Vec<f64> =
        score_pyramids(&state.model, &train_set, ScoreMode::Nll)?.iter().map(|r| r.score).collect();
    let threshold = calibrate_threshold(&train_scores, 0.95)?;
    let recs = score_samples(&state.model, &test, ScoreMode::Nll)?;
    let flagged = recs.iter().filter(|r| decide(r, &threshold).is_anomalous()).count();
    println!("threshold {:.4}: {flagged}/{} test samples flagged", threshold.theta, recs.len());

    let (mut hits, mut total) = (0, 0);
    for s in test.iter().filter(|s| s.label.is_anomalous()) {
        let finest = &s.pyramid.scales()[0];
        let map = localize(&state.model, &s.pyramid, (finest.height(), finest.width()))?;
        let (r, c) = map.argmax();
        let [cy, cx] = s.entry.anomaly_center.expect("anomalies carry a center");
        let radius = s.entry.anomaly_radius.expect("anomalies carry a radius");
        total += 1;
        if ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt() <= radius {
            hits += 1;
        }
    }
    println!("localization: {hits}/{total} argmax inside the anomaly radius");
    Ok(())
}
