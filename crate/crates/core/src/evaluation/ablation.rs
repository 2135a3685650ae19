use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::auroc;
use crate::error::{CsFlowError, Result};
use crate::feature_pyramid::{Dataset, Label};
use crate::flow::resample::resize_bilinear;
use crate::flow::{FlowConfig, FlowModel};
use crate::scoring::ScoreMode;
use crate::tensor::{stack_sum_squares, total_len, Tensor};
use crate::training::{train_tensors, NullSink, TrainConfig, TrainState};

/// How the scales of a pyramid are presented to the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// The full model on all scales jointly.
    CrossScale,
    /// One single-scale flow on the given level.
    SingleScale(usize),
    /// One single-scale flow per level; per-sample NLLs are summed.
    SeparateMultiScale,
    /// All levels resized to the finest resolution and stacked along channels.
    ConcatMultiScale,
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationVariant::CrossScale => f.write_str("cross_scale"),
            AblationVariant::SingleScale(i) => write!(f, "single_scale_{i}"),
            AblationVariant::SeparateMultiScale => f.write_str("separate_multi_scale"),
            AblationVariant::ConcatMultiScale => f.write_str("concat_multi_scale"),
        }
    }
}

impl FromStr for AblationVariant {
    type Err = CsFlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_scale" => Ok(Self::CrossScale),
            "separate" | "separate_multi_scale" => Ok(Self::SeparateMultiScale),
            "concat" | "concat_multi_scale" => Ok(Self::ConcatMultiScale),
            _ => s
                .strip_prefix("single_scale_")
                .or_else(|| s.strip_prefix("single_scale:"))
                .and_then(|i| i.parse().ok())
                .map(Self::SingleScale)
                .ok_or_else(|| CsFlowError::InvalidConfig(format!("unknown ablation variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub variants: Vec<AblationVariant>,
    /// Block counts for the cross-scale sweep; empty skips it.
    pub block_counts: Vec<usize>,
    pub score_mode: ScoreMode,
}

impl AblationSpec {
    /// Every variant for a pyramid with `num_scales` levels, no block sweep.
    pub fn all_variants(num_scales: usize) -> Self {
        let mut variants = vec![AblationVariant::CrossScale];
        variants.extend((0..num_scales).map(AblationVariant::SingleScale));
        variants.push(AblationVariant::SeparateMultiScale);
        variants.push(AblationVariant::ConcatMultiScale);
        Self { variants, block_counts: Vec::new(), score_mode: ScoreMode::Nll }
    }

    pub fn validate(&self, num_scales: usize) -> Result<()> {
        for v in &self.variants {
            if let AblationVariant::SingleScale(i) = v {
                if *i >= num_scales {
                    return Err(CsFlowError::InvalidConfig(format!(
                        "single_scale index {i} out of range for {num_scales} scales"
                    )));
                }
            }
        }
        if self.block_counts.contains(&0) {
            return Err(CsFlowError::InvalidConfig("block counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub num_blocks: usize,
    pub num_parameters: usize,
    pub auroc: f64,
    /// Last-epoch mean train NLL per input dimension of the variant.
    pub final_train_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<AblationRow>,
    pub block_sweep: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: AblationVariant) -> Option<&AblationRow> {
        let name = variant.to_string();
        self.variants.iter().find(|r| r.variant == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Split {
    train: Vec<Vec<Tensor>>,
    test: Vec<Vec<Tensor>>,
    labels: Vec<Label>,
}

/// Trains and evaluates every requested setup under the same seeds.
pub fn run_ablation(
    spec: &AblationSpec,
    dataset: &Dataset,
    train_cfg: &TrainConfig,
    flow_cfg: &FlowConfig,
) -> Result<AblationReport> {
    let num_scales = dataset.signature.num_scales();
    spec.validate(num_scales)?;
    train_cfg.validate()?;
    flow_cfg.check_signature(&dataset.signature)?;
    let test = dataset.test_samples();
    let data = Split {
        train: dataset.train_pyramids().iter().map(|p| p.to_tensors()).collect(),
        test: test.iter().map(|s| s.pyramid.to_tensors()).collect(),
        labels: test.iter().map(|s| s.label).collect(),
    };
    if data.train.is_empty() {
        return Err(CsFlowError::Empty("ablation train split".into()));
    }
    let run = |variant: AblationVariant, flow: &FlowConfig| {
        run_variant(variant, &data, train_cfg, flow, spec.score_mode).map_err(|e| CsFlowError::Variant {
            variant: format!("{variant} ({} blocks)", flow.num_blocks),
            source: Box::new(e),
        })
    };
    let variants = spec.variants.par_iter().map(|&v| run(v, flow_cfg)).collect::<Result<Vec<_>>>()?;
    let block_sweep = spec
        .block_counts
        .par_iter()
        .map(|&n| {
            let flow = flow_cfg.clone().with_blocks(n);
            run(AblationVariant::CrossScale, &flow)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { variants, block_sweep })
}

/// Per-sample unnormalized score, final unnormalized mean train NLL and
/// parameter count of one trained flow.
struct Fitted {
    scores: Vec<f64>,
    final_nll: f64,
    num_parameters: usize,
}

fn fit(
    flow: FlowConfig,
    train: &[Vec<Tensor>],
    test: &[Vec<Tensor>],
    cfg: &TrainConfig,
    mode: ScoreMode,
) -> Result<Fitted> {
    let mut state = TrainState::new(FlowModel::build(flow)?, cfg);
    train_tensors(&mut state, train, cfg, &mut NullSink)?;
    let d = total_len(&train[0]) as f64;
    let final_nll = state.history.epochs.last().map_or(f64::NAN, |e| e.mean_nll) * d;
    let scores = test
        .par_iter()
        .map(|y| {
            let r = state.model.forward_tensors(y)?;
            let energy = 0.5 * stack_sum_squares(&r.latent);
            Ok(match mode {
                ScoreMode::Nll => energy - r.logdet,
                ScoreMode::ZEnergy => energy,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Fitted { scores, final_nll, num_parameters: state.model.num_parameters() })
}

fn select_scale(data: &[Vec<Tensor>], i: usize) -> Vec<Vec<Tensor>> {
    data.iter().map(|y| vec![y[i].clone()]).collect()
}

fn concat_scales(data: &[Vec<Tensor>]) -> Vec<Vec<Tensor>> {
    data.iter()
        .map(|y| {
            let (h, w) = (y[0].height(), y[0].width());
            let mut out = y[0].clone();
            for t in &y[1..] {
                out = Tensor::concat_channels(&out, &resize_bilinear(t, h, w));
            }
            vec![out]
        })
        .collect()
}

fn run_variant(
    variant: AblationVariant,
    data: &Split,
    cfg: &TrainConfig,
    flow: &FlowConfig,
    mode: ScoreMode,
) -> Result<AblationRow> {
    let single = |channels: usize| FlowConfig { num_scales: 1, channels, ..flow.clone() };
    let full_dims = total_len(&data.train[0]) as f64;
    let fitted = match variant {
        AblationVariant::CrossScale => vec![fit(flow.clone(), &data.train, &data.test, cfg, mode)?],
        AblationVariant::SingleScale(i) => {
            vec![fit(single(flow.channels), &select_scale(&data.train, i), &select_scale(&data.test, i), cfg, mode)?]
        }
        AblationVariant::SeparateMultiScale => (0..flow.num_scales)
            .into_par_iter()
            .map(|i| fit(single(flow.channels), &select_scale(&data.train, i), &select_scale(&data.test, i), cfg, mode))
            .collect::<Result<Vec<_>>>()?,
        AblationVariant::ConcatMultiScale => {
            let train = concat_scales(&data.train);
            let test = concat_scales(&data.test);
            let channels = train[0][0].channels();
            vec![fit(single(channels), &train, &test, cfg, mode)?]
        }
    };
    let dims = match variant {
        AblationVariant::SingleScale(i) => data.train[0][i].len() as f64,
        AblationVariant::ConcatMultiScale => data.train[0][0].len() as f64 * flow.num_scales as f64,
        _ => full_dims,
    };
    let scores: Vec<(f64, Label)> = (0..data.test.len())
        .map(|k| (fitted.iter().map(|f| f.scores[k]).sum::<f64>() / dims, data.labels[k]))
        .collect();
    Ok(AblationRow {
        variant: variant.to_string(),
        num_blocks: flow.num_blocks,
        num_parameters: fitted.iter().map(|f| f.num_parameters).sum(),
        auroc: auroc(&scores)?,
        final_train_nll: fitted.iter().map(|f| f.final_nll).sum::<f64>() / dims,
    })
}
