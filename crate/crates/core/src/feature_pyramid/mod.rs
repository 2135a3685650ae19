//! Multi-scale feature pyramids: data model, the CSFP binary format,
//! dataset manifests and a synthetic generator.

pub mod csfp;
pub mod manifest;
pub mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CsFlowError, Result};
use crate::tensor::Tensor;

pub use csfp::{read_maps, read_pyramid, read_pyramid_file, write_maps, write_pyramid, write_pyramid_file};
pub use manifest::{
    load_dataset, load_dataset_with, Dataset, DatasetManifest, LoadOptions, LoadedSample, ManifestEntry,
};
pub use synthetic::{generate_samples, generate_synthetic, SyntheticConfig};

/// One feature tensor, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(CsFlowError::Invariant(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(CsFlowError::Invariant(format!(
                "feature map has {} values, expected {}",
                values.len(),
                channels * height * width
            )));
        }
        Ok(Self { channels, height, width, values })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(t.channels(), t.height(), t.width(), t.data().iter().map(|&v| v as f32).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.channels, self.height, self.width, self.values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// The shape of a pyramid without its values. Every sample of a dataset
/// must share one signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSignature {
    pub channels: usize,
    /// `(height, width)` per scale, finest first.
    pub dims: Vec<(usize, usize)>,
}

impl ShapeSignature {
    pub fn num_scales(&self) -> usize {
        self.dims.len()
    }

    pub fn total_len(&self) -> usize {
        self.dims.iter().map(|(h, w)| self.channels * h * w).sum()
    }
}

impl fmt::Display for ShapeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C={} [", self.channels)?;
        for (i, (h, w)) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{h}x{w}")?;
        }
        write!(f, "]")
    }
}

/// Ordered stack of feature maps for one sample, finest scale first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    scales: Vec<FeatureMap>,
    sample_id: String,
}

impl FeaturePyramid {
    /// Builds a pyramid, enforcing every structural invariant.
    pub fn new(sample_id: impl Into<String>, scales: Vec<FeatureMap>) -> Result<Self> {
        let p = Self { scales, sample_id: sample_id.into() };
        p.validate()?;
        Ok(p)
    }

    pub fn from_tensors(sample_id: impl Into<String>, tensors: &[Tensor]) -> Result<Self> {
        let scales = tensors.iter().map(FeatureMap::from_tensor).collect::<Result<Vec<_>>>()?;
        Self::new(sample_id, scales)
    }

    /// Checks: at least one scale, equal and even channel counts, spatial
    /// halving between consecutive scales, finite values.
    pub fn validate(&self) -> Result<()> {
        validate_scales(&self.scales)?;
        for (s, map) in self.scales.iter().enumerate() {
            if let Some(index) = map.first_non_finite() {
                return Err(CsFlowError::NonFiniteValue { scale: s, index });
            }
        }
        Ok(())
    }

    pub fn scales(&self) -> &[FeatureMap] {
        &self.scales
    }

    pub fn scales_mut(&mut self) -> &mut [FeatureMap] {
        &mut self.scales
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn channels(&self) -> usize {
        self.scales[0].channels
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn set_sample_id(&mut self, id: impl Into<String>) {
        self.sample_id = id.into();
    }

    pub fn signature(&self) -> ShapeSignature {
        ShapeSignature { channels: self.channels(), dims: self.scales.iter().map(|m| (m.height, m.width)).collect() }
    }

    /// Total number of scalar features across all scales.
    pub fn total_len(&self) -> usize {
        self.scales.iter().map(FeatureMap::len).sum()
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.scales.iter().map(FeatureMap::to_tensor).collect()
    }
}

pub(crate) fn validate_scales(scales: &[FeatureMap]) -> Result<()> {
    let first = scales.first().ok_or_else(|| CsFlowError::Invariant("pyramid needs at least one scale".into()))?;
    let c = first.channels;
    if c % 2 != 0 {
        return Err(CsFlowError::Invariant(format!("channel count must be even for the coupling split, got {c}")));
    }
    for (i, m) in scales.iter().enumerate() {
        if m.channels != c {
            return Err(CsFlowError::Invariant(format!("scale {i} has {} channels, scale 0 has {c}", m.channels)));
        }
        if i > 0 {
            let prev = &scales[i - 1];
            if prev.height != 2 * m.height || prev.width != 2 * m.width {
                return Err(CsFlowError::Invariant(format!(
                    "scale {i} is {}x{} but must halve scale {} ({}x{})",
                    m.height,
                    m.width,
                    i - 1,
                    prev.height,
                    prev.width
                )));
            }
        }
    }
    Ok(())
}

/// Binary sample label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Label::Anomalous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Normal => Label::Anomalous,
            Label::Anomalous => Label::Normal,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = CsFlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomalous" => Ok(Label::Anomalous),
            other => Err(CsFlowError::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(c, h, w, vec![0.0; c * h * w]).unwrap()
    }

    #[test]
    fn rejects_odd_channels() {
        let err = FeaturePyramid::new("x", vec![map(3, 2, 2)]).unwrap_err();
        assert!(matches!(err, CsFlowError::Invariant(_)));
    }

    #[test]
    fn rejects_non_halving_scales() {
        assert!(FeaturePyramid::new("x", vec![map(2, 4, 4), map(2, 3, 2)]).is_err());
        assert!(FeaturePyramid::new("x", vec![map(2, 4, 4), map(2, 2, 2), map(2, 1, 1)]).is_ok());
    }

    #[test]
    fn rejects_mixed_channels() {
        assert!(FeaturePyramid::new("x", vec![map(4, 4, 4), map(2, 2, 2)]).is_err());
    }

    #[test]
    fn rejects_nan() {
        let mut m = map(2, 1, 1);
        m.values_mut()[1] = f32::NAN;
        let err = FeaturePyramid::new("x", vec![m]).unwrap_err();
        assert!(matches!(err, CsFlowError::NonFiniteValue { scale: 0, index: 1 }));
    }

    #[test]
    fn value_count_checked() {
        assert!(FeatureMap::new(2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn signature_display() {
        let p = FeaturePyramid::new("x", vec![map(2, 4, 4), map(2, 2, 2)]).unwrap();
        assert_eq!(p.signature().to_string(), "C=2 [4x4, 2x2]");
        assert_eq!(p.total_len(), 40);
    }
}
