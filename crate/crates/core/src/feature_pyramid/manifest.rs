//! Dataset manifests.
//!
//! A manifest is a TOML file listing one entry per sample:
//!
//! ```toml
//! format_version = 1
//!
//! [[entries]]
//! sample_id = "bottle_train_normal_0000"
//! feature_file_path = "samples/bottle_train_normal_0000.csfp"
//! label = "normal"        # normal | anomalous
//! split = "train"         # train | test
//! class_name = "bottle"
//! # optional, written by the synthetic generator for anomalous samples:
//! anomaly_center = [5.0, 9.0]   # (row, col) at the finest scale
//! anomaly_radius = 3.0
//! ```
//!
//! Relative feature paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{read_pyramid_file, FeaturePyramid, Label, ShapeSignature, Split};
use crate::error::{CsFlowError, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub feature_file_path: PathBuf,
    pub label: Label,
    pub split: Split,
    pub class_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self { format_version: MANIFEST_VERSION, entries: Vec::new() }
    }
}

impl DatasetManifest {
    /// Checks version, unique ids, and that every train entry is normal.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(CsFlowError::UnsupportedVersion(self.format_version));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(CsFlowError::Manifest(format!("duplicate sample_id {:?}", e.sample_id)));
            }
            if e.split == Split::Train && e.label == Label::Anomalous {
                return Err(CsFlowError::AnomalousTrainEntry(e.sample_id.clone()));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: DatasetManifest = toml::from_str(text).map_err(|e| CsFlowError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CsFlowError::Manifest(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CsFlowError::io_at(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        fs::write(path, self.to_toml_string()?).map_err(|e| CsFlowError::io_at(path, e))
    }

    /// Concatenates manifests (e.g. several classes for joint training).
    /// Paths must already be valid relative to the merged manifest location.
    pub fn merge(manifests: impl IntoIterator<Item = DatasetManifest>) -> Result<Self> {
        let mut out = DatasetManifest::default();
        for m in manifests {
            out.entries.extend(m.entries);
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Per-scale, per-channel standardization with statistics taken from the
    /// train split. Off by default.
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub pyramid: FeaturePyramid,
    pub label: Label,
    pub split: Split,
    pub entry: ManifestEntry,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<LoadedSample>,
    pub signature: ShapeSignature,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LoadedSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn train_pyramids(&self) -> Vec<FeaturePyramid> {
        self.split(Split::Train).map(|s| s.pyramid.clone()).collect()
    }

    pub fn test_samples(&self) -> Vec<&LoadedSample> {
        self.split(Split::Test).collect()
    }

    /// Keeps only samples of the given class.
    pub fn filter_class(mut self, class_name: &str) -> Self {
        self.samples.retain(|s| s.entry.class_name == class_name);
        self
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for s in &self.samples {
            if !names.contains(&s.entry.class_name) {
                names.push(s.entry.class_name.clone());
            }
        }
        names
    }
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(manifest_path, LoadOptions::default())
}

pub fn load_dataset_with(manifest_path: impl AsRef<Path>, options: LoadOptions) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    if manifest.entries.is_empty() {
        return Err(CsFlowError::Empty(format!("manifest {} has no entries", manifest_path.display())));
    }

    let mut samples = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let path = if entry.feature_file_path.is_absolute() {
                entry.feature_file_path.clone()
            } else {
                base.join(&entry.feature_file_path)
            };
            let mut pyramid = read_pyramid_file(&path)?;
            pyramid.set_sample_id(entry.sample_id.clone());
            Ok(LoadedSample { pyramid, label: entry.label, split: entry.split, entry: entry.clone() })
        })
        .collect::<Result<Vec<_>>>()?;

    let signature = samples[0].pyramid.signature();
    for s in &samples[1..] {
        let sig = s.pyramid.signature();
        if sig != signature {
            return Err(CsFlowError::ShapeMismatch(format!(
                "sample {} has shape {sig}, dataset shape is {signature}",
                s.pyramid.sample_id()
            )));
        }
    }

    if options.standardize {
        standardize(&mut samples)?;
    }
    Ok(Dataset { samples, signature })
}

fn standardize(samples: &mut [LoadedSample]) -> Result<()> {
    let train: Vec<usize> =
        samples.iter().enumerate().filter(|(_, s)| s.split == Split::Train).map(|(i, _)| i).collect();
    if train.is_empty() {
        return Err(CsFlowError::Empty("standardization needs at least one train sample".into()));
    }
    let num_scales = samples[0].pyramid.num_scales();
    for scale in 0..num_scales {
        let c = samples[0].pyramid.scales()[scale].channels();
        let plane = samples[0].pyramid.scales()[scale].len() / c;
        for ch in 0..c {
            let range = ch * plane..(ch + 1) * plane;
            let (mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0usize);
            for &i in &train {
                for &v in &samples[i].pyramid.scales()[scale].values()[range.clone()] {
                    sum += f64::from(v);
                    sum_sq += f64::from(v) * f64::from(v);
                    n += 1;
                }
            }
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for s in samples.iter_mut() {
                for v in &mut s.pyramid.scales_mut()[scale].values_mut()[range.clone()] {
                    *v = ((f64::from(*v) - mean) / std) as f32;
                }
            }
        }
    }
    Ok(())
}
