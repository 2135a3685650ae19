//! Metrics report.
//!
//! JSON object:
//!
//! ```text
//! {
//!   "auroc": number,
//!   "num_normal": integer,
//!   "num_anomalous": integer,
//!   "roc": { "points": [[fpr, tpr], ...], "thresholds": [number, ...], "auroc": number },
//!   "histogram": {
//!     "edges": [number, ...],          // bins + 1
//!     "normal": [number, ...],         // fractions of normal samples per bin
//!     "anomalous": [number, ...],
//!     "num_normal": integer,
//!     "num_anomalous": integer
//!   }
//! }
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{histogram, labeled_scores, roc_curve, Histogram, RocCurve};
use crate::error::{CsFlowError, Result};
use crate::scoring::ScoreRecord;

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub num_normal: usize,
    pub num_anomalous: usize,
    pub roc: RocCurve,
    pub histogram: Histogram,
}

pub fn evaluate(records: &[ScoreRecord], bins: usize, clip_max: Option<f64>) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(CsFlowError::Empty("no score records".into()));
    }
    let scores = labeled_scores(records)?;
    let roc = roc_curve(&scores)?;
    let histogram = histogram(&scores, bins, clip_max)?;
    Ok(MetricsReport {
        auroc: roc.auroc,
        num_normal: histogram.num_normal,
        num_anomalous: histogram.num_anomalous,
        roc,
        histogram,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV `fpr,tpr,threshold`; the first row has an empty threshold.
    pub fn write_roc_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fpr", "tpr", "threshold"])?;
        for (i, p) in self.roc.points.iter().enumerate() {
            let t = if i == 0 { String::new() } else { self.roc.thresholds[i - 1].to_string() };
            w.write_record([p[0].to_string(), p[1].to_string(), t])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `bin_start,bin_end,normal,anomalous`.
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<()> {
        let h = &self.histogram;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_start", "bin_end", "normal", "anomalous"])?;
        for i in 0..h.normal.len() {
            w.write_record([
                h.edges[i].to_string(),
                h.edges[i + 1].to_string(),
                h.normal[i].to_string(),
                h.anomalous[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
