//! Evaluate a score file: AUROC, ROC curve and per-class histogram.
//!
//! ```text
//! cargo run --example roc_histogram -- [scores.csv]
//! ```
//!
//! Without an argument a score file with overlapping classes is made up.

use std::fs::File;

use csflow::evaluation::evaluate;
use csflow::feature_pyramid::Label;
use csflow::scoring::{read_scores_file, write_scores_file, ScoreRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn made_up() -> Vec<ScoreRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(1.0, 0.3).unwrap();
    let anomalous = Normal::new(1.8, 0.5).unwrap();
    (0..400)
        .map(|i| {
            let (score, label) = if i % 4 == 0 {
                (anomalous.sample(&mut rng), Label::Anomalous)
            } else {
                (normal.sample(&mut rng), Label::Normal)
            };
            ScoreRecord { sample_id: format!("s{i:03}"), score, label: Some(label) }
        })
        .collect()
}

fn main() -> csflow::Result<()> {
    let dir = std::env::temp_dir().join("csflow-roc");
    std::fs::create_dir_all(&dir)?;
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let p = dir.join("scores.csv");
            write_scores_file(&made_up(), &p)?;
            p
        }
    };
    let report = evaluate(&read_scores_file(&path)?, 12, Some(3.0))?;
    println!("AUROC {:.4} ({} normal, {} anomalous)", report.auroc, report.num_normal, report.num_anomalous);

    let h = &report.histogram;
    for i in 0..h.normal.len() {
        let bar = |p: f64| "#".repeat((p * 60.0).round() as usize);
        println!("[{:5.2}, {:5.2})  N {:<20} A {}", h.edges[i], h.edges[i + 1], bar(h.normal[i]), bar(h.anomalous[i]));
    }
    report.write_roc_csv(File::create(dir.join("roc.csv"))?)?;
    report.write_histogram_csv(File::create(dir.join("histogram.csv"))?)?;
    std::fs::write(dir.join("metrics.json"), report.to_json()?)?;
    println!("roc.csv, histogram.csv and metrics.json in {}", dir.display());
    Ok(())
}
