use serde::{Deserialize, Serialize};

use crate::error::{CsFlowError, Result};
use crate::feature_pyramid::Label;
use crate::scoring::ScoreRecord;

/// `(score, label)` pairs from score records; every record needs a label.
pub fn labeled_scores(records: &[ScoreRecord]) -> Result<Vec<(f64, Label)>> {
    records
        .iter()
        .map(|r| {
            r.label
                .map(|l| (r.score, l))
                .ok_or_else(|| CsFlowError::UndefinedMetric(format!("sample {} has no label", r.sample_id)))
        })
        .collect()
}

fn class_counts(scores: &[(f64, Label)]) -> Result<(usize, usize)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(CsFlowError::UndefinedMetric(format!("non-finite score {s}")));
    }
    let pos = scores.iter().filter(|(_, l)| l.is_anomalous()).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CsFlowError::UndefinedMetric(format!(
            "AUROC needs both classes, got {neg} normal and {pos} anomalous"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUROC with average ranks for ties. Anomalous is the
/// positive class.
pub fn auroc(scores: &[(f64, Label)]) -> Result<f64> {
    let (pos, neg) = class_counts(scores)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    // ranks are 1-based; twice the average rank of a tie group [i, j) is i + j + 1
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]].0 == scores[idx[i]].0 {
            j += 1;
        }
        let positives = idx[i..j].iter().filter(|&&k| scores[k].1.is_anomalous()).count() as u64;
        twice_rank_sum += positives * (i + j + 1) as u64;
        i = j;
    }
    let p = pos as u64;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok((twice_u as f64 / 2.0) / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `[false_positive_rate, true_positive_rate]`, from `[0, 0]` to `[1, 1]`.
    pub points: Vec<[f64; 2]>,
    /// Score threshold reached at `points[i + 1]` (scores `>=` it are positive).
    pub thresholds: Vec<f64>,
    pub auroc: f64,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1][0] - w[0][0]) * (w[1][1] + w[0][1]) / 2.0).sum()
    }
}

/// Sweeps every distinct score as a threshold, highest first.
pub fn roc_curve(scores: &[(f64, Label)]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![[0.0, 0.0]];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1.is_anomalous() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push([fp as f64 / neg as f64, tp as f64 / pos as f64]);
        thresholds.push(t);
    }
    Ok(RocCurve { points, thresholds, auroc: auroc(scores)? })
}

/// Per-class normalized score histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin also holds everything above the last edge.
    pub edges: Vec<f64>,
    pub normal: Vec<f64>,
    pub anomalous: Vec<f64>,
    pub num_normal: usize,
    pub num_anomalous: usize,
}

/// Bins span `[min score, clip_max]`, or up to the maximum score when no
/// clip is given. Scores above the upper edge go in the last bin.
pub fn histogram(scores: &[(f64, Label)], bins: usize, clip_max: Option<f64>) -> Result<Histogram> {
    if bins == 0 {
        return Err(CsFlowError::InvalidConfig("histogram needs at least one bin".into()));
    }
    let finite = scores.iter().map(|s| s.0).filter(|s| s.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let lo = if lo.is_finite() { lo } else { 0.0 };
    let hi = clip_max.unwrap_or_else(|| finite.fold(f64::NEG_INFINITY, f64::max)).max(lo);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut normal = vec![0.0; bins];
    let mut anomalous = vec![0.0; bins];
    let (mut nn, mut na) = (0usize, 0usize);
    for &(s, label) in scores {
        let b = if width == 0.0 {
            if s > hi {
                bins - 1
            } else {
                0
            }
        } else if s >= hi {
            bins - 1
        } else {
            (((s - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        };
        if label.is_anomalous() {
            anomalous[b] += 1.0;
            na += 1;
        } else {
            normal[b] += 1.0;
            nn += 1;
        }
    }
    for (counts, n) in [(&mut normal, nn), (&mut anomalous, na)] {
        if n > 0 {
            counts.iter_mut().for_each(|c| *c /= n as f64);
        }
    }
    Ok(Histogram { edges, normal, anomalous, num_normal: nn, num_anomalous: na })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Anomalous as A, Normal as N};

    fn pairs(s: &[f64], l: &[Label]) -> Vec<(f64, Label)> {
        s.iter().copied().zip(l.iter().copied()).collect()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&pairs(&[0.0, 1.0, 2.0, 3.0], &[N, N, A, A])).unwrap(), 1.0);
        assert_eq!(auroc(&pairs(&[1.0; 4], &[N, A, N, A])).unwrap(), 0.5);
        assert_eq!(auroc(&pairs(&[1.0, 2.0, 3.0, 4.0], &[N, A, N, A])).unwrap(), 0.75);
    }

    #[test]
    fn single_class_undefined() {
        assert!(matches!(auroc(&pairs(&[1.0, 2.0], &[N, N])), Err(CsFlowError::UndefinedMetric(_))));
        assert!(roc_curve(&pairs(&[1.0], &[A])).is_err());
        assert!(auroc(&[]).is_err());
    }

    #[test]
    fn roc_perfect_separation() {
        let c = roc_curve(&pairs(&[0.0, 1.0, 2.0, 3.0], &[N, N, A, A])).unwrap();
        assert!(c.points.contains(&[0.0, 1.0]));
        assert_eq!(c.points.first(), Some(&[0.0, 0.0]));
        assert_eq!(c.points.last(), Some(&[1.0, 1.0]));
        assert_eq!(c.trapezoid_area(), 1.0);
        assert_eq!(c.thresholds.len(), c.points.len() - 1);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[(0.7, N)], 1, None).unwrap();
        assert_eq!(h.normal, vec![1.0]);
        let h = histogram(&pairs(&[2.5, 10.0, 99.0], &[N, N, N]), 5, Some(3.0)).unwrap();
        assert!((h.normal[4] - 2.0 / 3.0).abs() < 1e-15);
        assert!((h.normal[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.edges.len(), 6);
        assert_eq!(*h.edges.last().unwrap(), 3.0);
    }

    #[test]
    fn histogram_degenerate() {
        let h = histogram(&pairs(&[1.0, 1.0], &[N, A]), 3, None).unwrap();
        assert_eq!(h.normal, vec![1.0, 0.0, 0.0]);
        assert_eq!(h.anomalous, vec![1.0, 0.0, 0.0]);
        assert!(histogram(&[], 0, None).is_err());
        let h = histogram(&[], 2, None).unwrap();
        assert_eq!(h.normal, vec![0.0, 0.0]);
    }

    #[test]
    fn labels_required() {
        let recs = vec![ScoreRecord { sample_id: "x".into(), score: 1.0, label: None }];
        assert!(labeled_scores(&recs).is_err());
    }
}
