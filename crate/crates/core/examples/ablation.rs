//! Compare the cross-scale flow with single-scale, separate and
//! concatenated alternatives, then sweep the number of blocks.
//!
//! ```text
//! cargo run --example ablation -- [epochs] [amplitude]
//! ```

use csflow::evaluation::{run_ablation, AblationSpec};
use csflow::feature_pyramid::{generate_synthetic, load_dataset, SyntheticConfig};
use csflow::flow::FlowConfig;
use csflow::training::TrainConfig;

fn main() -> csflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(20, |a| a.parse().expect("epochs"));
    let amplitude = args.next().map_or(2.0, |a| a.parse().expect("amplitude"));

    let dir = std::env::temp_dir().join("csflow-ablation");
    generate_synthetic(&SyntheticConfig { anomaly_amplitude: amplitude, ..SyntheticConfig::default() }, &dir)?;
    let data = load_dataset(dir.join("manifest.toml"))?;

    let mut spec = AblationSpec::all_variants(data.signature.num_scales());
    spec.block_counts = vec![1, 2, 4, 6];
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let report = run_ablation(&spec, &data, &cfg, &FlowConfig::for_signature(&data.signature))?;

    println!("{:<22} {:>6} {:>8} {:>8} {:>10}", "variant", "blocks", "params", "auroc", "train nll");
    for r in report.variants.iter().chain(&report.block_sweep) {
        println!(
            "{:<22} {:>6} {:>8} {:>8.4} {:>10.2}",
            r.variant, r.num_blocks, r.num_parameters, r.auroc, r.final_train_nll
        );
    }
    std::fs::write(dir.join("ablation.json"), report.to_json()?)?;
    Ok(())
}
