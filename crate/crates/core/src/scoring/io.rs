use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::ScoreRecord;
use crate::error::{CsFlowError, Result};
use crate::feature_pyramid::{write_maps, FeatureMap};
use crate::tensor::Tensor;

/// CSV with header `sample_id,score,label`; the label cell may be empty.
pub fn write_scores<W: Write>(records: &[ScoreRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        if !r.score.is_finite() {
            return Err(CsFlowError::Invariant(format!("score of {} is not finite", r.sample_id)));
        }
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["sample_id", "score", "label"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores<R: Read>(input: R) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let records = r.deserialize().collect::<std::result::Result<Vec<ScoreRecord>, _>>()?;
    if let Some(bad) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(CsFlowError::Invariant(format!("score of {} is not finite", bad.sample_id)));
    }
    Ok(records)
}

pub fn write_scores_file(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| CsFlowError::io_at(path, e))?;
    write_scores(records, BufWriter::new(f))
}

pub fn read_scores_file(path: &Path) -> Result<Vec<ScoreRecord>> {
    let f = File::open(path).map_err(|e| CsFlowError::io_at(path, e))?;
    read_scores(f)
}

/// 8-bit binary PGM of a single-channel map, min-max normalized.
/// A constant map renders black.
pub fn write_pgm<W: Write>(map: &Tensor, mut out: W) -> Result<()> {
    if map.channels() != 1 {
        return Err(CsFlowError::ShapeMismatch(format!("PGM needs 1 channel, got {}", map.channels())));
    }
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    write!(out, "P5\n{} {}\n255\n", map.width(), map.height())?;
    let bytes: Vec<u8> =
        map.data().iter().map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 }).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

/// Single-scale single-channel CSFP file.
pub fn write_localization_csfp<W: Write>(map: &Tensor, out: W) -> Result<()> {
    write_maps(&[FeatureMap::from_tensor(map)?], out)
}
