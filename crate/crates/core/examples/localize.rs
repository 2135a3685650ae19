//! Write anomaly maps for the anomalous test samples, at the finest scale
//! and summed over all scales.

use csflow::feature_pyramid::{generate_synthetic, load_dataset, SyntheticConfig};
use csflow::flow::{FlowConfig, FlowModel};
use csflow::scoring::{localize_with, write_pgm, LocalizationMode};
use csflow::training::{train, NullSink, TrainConfig};

fn main() -> csflow::Result<()> {
    let dir = std::env::temp_dir().join("csflow-localize");
    generate_synthetic(&SyntheticConfig::default(), &dir)?;
    let data = load_dataset(dir.join("manifest.toml"))?;
    let cfg = TrainConfig { epochs: 15, ..TrainConfig::default() };
    let state = train(
        FlowModel::build(FlowConfig::for_signature(&data.signature))?,
        &data.train_pyramids(),
        &cfg,
        &mut NullSink,
    )?;

    let maps = dir.join("maps");
    std::fs::create_dir_all(&maps)?;
    let target = (64, 64);
    for s in data.test_samples().into_iter().filter(|s| s.label.is_anomalous()).take(6) {
        let [cy, cx] = s.entry.anomaly_center.expect("center");
        for (mode, tag) in [(LocalizationMode::Finest, "finest"), (LocalizationMode::AllScales, "all")] {
            let map = localize_with(&state.model, &s.pyramid, Some(target), mode)?;
            let full = map.full.as_ref().expect("target given");
            write_pgm(full, std::fs::File::create(maps.join(format!("{}_{tag}.pgm", s.entry.sample_id)))?)?;
            let (r, c) = map.argmax();
            let f = target.0 as f64 / s.pyramid.scales()[0].height() as f64;
            println!(
                "{} {tag:>6}: argmax ({r}, {c}), true center ({:.1}, {:.1})",
                s.entry.sample_id,
                (cy + 0.5) * f - 0.5,
                (cx + 0.5) * f - 0.5
            );
        }
    }
    println!("maps in {}", maps.display());
    Ok(())
}
