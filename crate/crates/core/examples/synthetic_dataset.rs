//! Generate a synthetic feature-pyramid dataset and inspect it.
//!
//! ```text
//! cargo run --example synthetic_dataset -- [out_dir]
//! ```

use csflow::feature_pyramid::{generate_synthetic, load_dataset, read_pyramid_file, SyntheticConfig};
use csflow::Split;

fn main() -> csflow::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("csflow-synthetic"), Into::into);
    let cfg = SyntheticConfig { num_scales: 3, base_height: 24, base_width: 24, ..SyntheticConfig::default() };
    let manifest = generate_synthetic(&cfg, &out)?;
    println!("wrote {} entries to {}", manifest.entries.len(), out.join("manifest.toml").display());

    let data = load_dataset(out.join("manifest.toml"))?;
    println!("signature {}", data.signature);
    for split in [Split::Train, Split::Test] {
        let (mut normal, mut anomalous) = (0, 0);
        for s in data.split(split) {
            if s.label.is_anomalous() {
                anomalous += 1
            } else {
                normal += 1
            }
        }
        println!("{split}: {normal} normal, {anomalous} anomalous");
    }

    let first = manifest.entries.iter().find(|e| e.anomaly_center.is_some()).expect("an anomaly");
    let pyramid = read_pyramid_file(out.join(&first.feature_file_path))?;
    println!("{} ({}) center {:?}", first.sample_id, first.label, first.anomaly_center.unwrap());
    for (i, map) in pyramid.scales().iter().enumerate() {
        let peak = map.values().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        println!("  scale {i}: {}x{}x{}, peak |value| {peak:.2}", map.channels(), map.height(), map.width());
    }
    Ok(())
}
