//! Anomaly scores, threshold decisions and localization maps.

mod io;
mod localize;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{read_scores, read_scores_file, write_localization_csfp, write_pgm, write_scores, write_scores_file};
pub use localize::{energy_map, localize, localize_latent, localize_with, LocalizationMap, LocalizationMode};

use crate::error::{CsFlowError, Result};
use crate::feature_pyramid::{FeaturePyramid, Label, LoadedSample};
use crate::flow::{FlowModel, LatentResult};
use crate::tensor::stack_sum_squares;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `(||z||^2 / 2 - logdet) / D`.
    #[default]
    Nll,
    /// `||z||^2 / (2 D)`.
    ZEnergy,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Nll => "nll",
            ScoreMode::ZEnergy => "z_energy",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMode {
    type Err = CsFlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(ScoreMode::Nll),
            "z_energy" | "z-energy" => Ok(ScoreMode::ZEnergy),
            other => {
                Err(CsFlowError::InvalidConfig(format!("unknown score mode {other:?} (expected nll or z_energy)")))
            }
        }
    }
}

/// Higher scores are more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub score: f64,
    pub label: Option<Label>,
}

pub fn score_latent(latent: &LatentResult, mode: ScoreMode) -> f64 {
    let d = latent.total_len() as f64;
    let energy = 0.5 * stack_sum_squares(&latent.latent);
    match mode {
        ScoreMode::Nll => (energy - latent.logdet) / d,
        ScoreMode::ZEnergy => energy / d,
    }
}

/// Scores one pyramid; the label is left empty.
pub fn score_sample(model: &FlowModel, y: &FeaturePyramid, mode: ScoreMode) -> Result<ScoreRecord> {
    model.check_signature(&y.signature())?;
    let latent = model.forward(y)?;
    let score = score_latent(&latent, mode);
    if !score.is_finite() {
        return Err(CsFlowError::NonFinite { block: model.blocks().len() - 1, epoch: None });
    }
    Ok(ScoreRecord { sample_id: y.sample_id().to_string(), score, label: None })
}

/// Scores labeled samples in parallel, preserving input order.
pub fn score_samples(model: &FlowModel, samples: &[&LoadedSample], mode: ScoreMode) -> Result<Vec<ScoreRecord>> {
    samples
        .par_iter()
        .map(|s| {
            let mut r = score_sample(model, &s.pyramid, mode)?;
            r.label = Some(s.label);
            Ok(r)
        })
        .collect()
}

pub fn score_pyramids(model: &FlowModel, pyramids: &[FeaturePyramid], mode: ScoreMode) -> Result<Vec<ScoreRecord>> {
    pyramids.par_iter().map(|y| score_sample(model, y, mode)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub theta: f64,
    /// Quantile of the train-normal scores that produced `theta`.
    pub quantile: f64,
}

pub const DEFAULT_QUANTILE: f64 = 0.95;

/// Empirical `q`-quantile with linear interpolation between order
/// statistics at position `q * (n - 1)`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CsFlowError::Empty("quantile of no values".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(CsFlowError::InvalidConfig(format!("quantile must lie in (0, 1), got {q}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - lo as f64;
    Ok(if lo == hi || v[lo] == v[hi] { v[lo] } else { v[lo] + frac * (v[hi] - v[lo]) })
}

pub fn calibrate_threshold(train_scores: &[f64], q: f64) -> Result<Threshold> {
    Ok(Threshold { theta: quantile(train_scores, q)?, quantile: q })
}

/// Anomalous iff `score > theta`.
pub fn decide(record: &ScoreRecord, threshold: &Threshold) -> Label {
    if record.score > threshold.theta {
        Label::Anomalous
    } else {
        Label::Normal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use crate::tensor::Tensor;

    fn record(score: f64) -> ScoreRecord {
        ScoreRecord { sample_id: "s".into(), score, label: None }
    }

    #[test]
    fn fresh_model_scores() {
        let m = FlowModel::build(FlowConfig::new(1, 2)).unwrap();
        let zero = FeaturePyramid::from_tensors("z", &[Tensor::zeros(2, 2, 2)]).unwrap();
        for mode in [ScoreMode::Nll, ScoreMode::ZEnergy] {
            assert_eq!(score_sample(&m, &zero, mode).unwrap().score, 0.0);
        }
        let t = Tensor::from_vec(2, 2, 2, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0, -1.0, 0.25]);
        let y = FeaturePyramid::from_tensors("y", std::slice::from_ref(&t)).unwrap();
        let expected = t.sum_squares() / 16.0;
        let r = score_sample(&m, &y, ScoreMode::Nll).unwrap();
        assert!((r.score - expected).abs() < 1e-15);
        assert_eq!(r.sample_id, "y");
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[4.0, 2.0, 1.0, 3.0], 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&[7.0; 9], 0.95).unwrap(), 7.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = calibrate_threshold(&v, 0.95).unwrap();
        assert!(t.theta > 95.0 && t.theta < 96.0);
        assert!(quantile(&[], 0.5).is_err());
        assert!(quantile(&[1.0], 1.0).is_err());
        assert!(quantile(&[1.0], 0.0).is_err());
    }

    #[test]
    fn decisions() {
        let t = Threshold { theta: 1.0, quantile: 0.95 };
        assert_eq!(decide(&record(5.0), &t), Label::Anomalous);
        assert_eq!(decide(&record(0.5), &t), Label::Normal);
        assert_eq!(decide(&record(1.0), &t), Label::Normal);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("nll".parse::<ScoreMode>().unwrap(), ScoreMode::Nll);
        assert_eq!("z_energy".parse::<ScoreMode>().unwrap(), ScoreMode::ZEnergy);
        assert!("energy".parse::<ScoreMode>().is_err());
        assert_eq!(ScoreMode::default(), ScoreMode::Nll);
    }
}
