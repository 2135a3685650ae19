//! Merge manifests of several classes into one and train one model per
//! class from the combined file.

use csflow::evaluation::{auroc, labeled_scores};
use csflow::feature_pyramid::{generate_synthetic, load_dataset, DatasetManifest, SyntheticConfig};
use csflow::flow::{FlowConfig, FlowModel};
use csflow::scoring::{score_samples, ScoreMode};
use csflow::training::{train, NullSink, TrainConfig};

fn main() -> csflow::Result<()> {
    let dir = std::env::temp_dir().join("csflow-multi-class");
    let mut parts = Vec::new();
    for (i, class) in ["carpet", "grid", "leather"].into_iter().enumerate() {
        let cfg = SyntheticConfig {
            class_name: class.into(),
            seed: i as u64,
            anomaly_amplitude: 2.0 + i as f64,
            ..SyntheticConfig::default()
        };
        let mut m = generate_synthetic(&cfg, dir.join(class))?;
        for e in &mut m.entries {
            e.sample_id = format!("{class}/{}", e.sample_id);
            e.feature_file_path = std::path::Path::new(class).join(&e.feature_file_path);
        }
        parts.push(m);
    }
    DatasetManifest::merge(parts)?.write(dir.join("all.toml"))?;

    let all = load_dataset(dir.join("all.toml"))?;
    for class in all.class_names() {
        let data = all.clone().filter_class(&class);
        let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
        let state = train(
            FlowModel::build(FlowConfig::for_signature(&data.signature))?,
            &data.train_pyramids(),
            &cfg,
            &mut NullSink,
        )?;
        let recs = score_samples(&state.model, &data.test_samples(), ScoreMode::Nll)?;
        println!("{class:<8} {} samples, AUROC {:.4}", data.samples.len(), auroc(&labeled_scores(&recs)?)?);
    }
    Ok(())
}
