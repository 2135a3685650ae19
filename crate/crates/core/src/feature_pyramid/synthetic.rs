//! Synthetic feature pyramids for desk-scale experiments.
//!
//! Normal samples are smooth Gaussian random fields with unit marginal
//! variance: white noise blurred by a 5-tap binomial kernel per axis. Each
//! coarser scale mixes a box-pooled copy of the finest field with fresh
//! blurred noise, so scales are correlated the way multi-resolution image
//! features are. Anomalous samples add a compact bump with random per-channel
//! signs at the same image location in every scale.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry};
use super::{write_pyramid_file, FeatureMap, FeaturePyramid, Label, Split};
use crate::error::{CsFlowError, Result};

const BINOMIAL5: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Total normal samples; the last `num_test_normal` go to the test split.
    pub num_normal: usize,
    pub num_test_normal: usize,
    /// Anomalous samples, all in the test split.
    pub num_anomalous: usize,
    pub num_scales: usize,
    pub channels: usize,
    pub base_height: usize,
    pub base_width: usize,
    /// Peak bump height in units of the field standard deviation (which is 1).
    pub anomaly_amplitude: f64,
    /// Bump radius in finest-scale pixels.
    pub anomaly_radius: f64,
    /// Weight of the pooled finest field in each coarser scale, in `[0, 1]`.
    pub scale_correlation: f64,
    pub class_name: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_normal: 96,
            num_test_normal: 32,
            num_anomalous: 32,
            num_scales: 2,
            channels: 8,
            base_height: 16,
            base_width: 16,
            anomaly_amplitude: 5.0,
            anomaly_radius: 3.0,
            scale_correlation: 0.7,
            class_name: "synthetic".into(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CsFlowError::InvalidConfig(m));
        if self.num_scales == 0 {
            return bad("num_scales must be at least 1".into());
        }
        if self.channels == 0 || !self.channels.is_multiple_of(2) {
            return bad(format!("channels must be positive and even, got {}", self.channels));
        }
        let f = 1usize << (self.num_scales - 1);
        if self.base_height == 0 || self.base_width == 0 || !self.base_height.is_multiple_of(f) || !self.base_width.is_multiple_of(f) {
            return bad(format!(
                "base size {}x{} must be a positive multiple of {f} for {} scales",
                self.base_height, self.base_width, self.num_scales
            ));
        }
        if self.num_test_normal > self.num_normal {
            return bad("num_test_normal exceeds num_normal".into());
        }
        if !(self.anomaly_amplitude.is_finite() && self.anomaly_amplitude >= 0.0) {
            return bad("anomaly_amplitude must be finite and non-negative".into());
        }
        if !(self.anomaly_radius.is_finite() && self.anomaly_radius > 0.0) {
            return bad("anomaly_radius must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.scale_correlation) {
            return bad("scale_correlation must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.num_normal + self.num_anomalous
    }
}

/// Unit-energy binomial blur kernel for one axis.
fn blur_kernel() -> [f64; 5] {
    let energy: f64 = BINOMIAL5.iter().map(|v| v * v).sum();
    let norm = energy.sqrt();
    BINOMIAL5.map(|v| v / norm)
}

/// Variance of the finest field after `factor`-box pooling.
fn pooled_variance(factor: usize) -> f64 {
    let k = blur_kernel();
    let mut conv = vec![0.0; k.len() + factor - 1];
    for (i, kv) in k.iter().enumerate() {
        for j in 0..factor {
            conv[i + j] += kv / factor as f64;
        }
    }
    // separable: 2-D variance is the product of the per-axis energies
    let axis: f64 = conv.iter().map(|v| v * v).sum();
    axis * axis
}

/// One blurred white-noise plane with unit marginal variance.
fn blurred_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let k = blur_kernel();
    let (ph, pw) = (h + 4, w + 4);
    let noise: Vec<f64> = (0..ph * pw).map(|_| rng.sample(StandardNormal)).collect();
    let mut rows = vec![0.0; ph * w];
    for y in 0..ph {
        for x in 0..w {
            rows[y * w + x] = (0..5).map(|t| k[t] * noise[y * pw + x + t]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..5).map(|t| k[t] * rows[(y + t) * w + x]).sum();
        }
    }
    out
}

fn box_pool(field: &[f64], h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0.0; oh * ow];
    let inv = 1.0 / (factor * factor) as f64;
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += field[(y * factor + dy) * w + x * factor + dx];
                }
            }
            out[y * ow + x] = acc * inv;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Bump {
    center: [f64; 2],
    radius: f64,
}

impl Bump {
    /// Compact biweight profile evaluated at a pixel of a scale whose
    /// pixels are `factor` finest pixels wide.
    fn profile(&self, y: usize, x: usize, factor: usize) -> f64 {
        let f = factor as f64;
        let fy = (y as f64 + 0.5) * f - 0.5;
        let fx = (x as f64 + 0.5) * f - 0.5;
        let d2 = (fy - self.center[0]).powi(2) + (fx - self.center[1]).powi(2);
        let r2 = self.radius * self.radius;
        if d2 >= r2 {
            0.0
        } else {
            let u = 1.0 - d2 / r2;
            u * u
        }
    }
}

fn sample_pyramid(
    cfg: &SyntheticConfig,
    index: usize,
    anomalous: bool,
    id: String,
) -> Result<(FeaturePyramid, Option<Bump>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (h0, w0) = (cfg.base_height, cfg.base_width);
    let c = cfg.channels;
    let rho = cfg.scale_correlation;
    let fresh_weight = (1.0 - rho * rho).sqrt();

    let finest: Vec<Vec<f64>> = (0..c).map(|_| blurred_field(&mut rng, h0, w0)).collect();
    let mut scales: Vec<Vec<Vec<f64>>> = vec![finest];
    for s in 1..cfg.num_scales {
        let f = 1 << s;
        let (h, w) = (h0 / f, w0 / f);
        let norm = 1.0 / pooled_variance(f).sqrt();
        let planes = (0..c)
            .map(|ch| {
                let pooled = box_pool(&scales[0][ch], h0, w0, f);
                let fresh = blurred_field(&mut rng, h, w);
                pooled.iter().zip(&fresh).map(|(p, q)| rho * p * norm + fresh_weight * q).collect()
            })
            .collect();
        scales.push(planes);
    }

    let bump = if anomalous {
        let r = cfg.anomaly_radius;
        let margin_y = (r.ceil() as usize).min((h0 - 1) / 2);
        let margin_x = (r.ceil() as usize).min((w0 - 1) / 2);
        let cy = rng.random_range(margin_y..=h0 - 1 - margin_y) as f64;
        let cx = rng.random_range(margin_x..=w0 - 1 - margin_x) as f64;
        let signs: Vec<f64> = (0..c).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let bump = Bump { center: [cy, cx], radius: r };
        for (s, planes) in scales.iter_mut().enumerate() {
            let f = 1 << s;
            let (h, w) = (h0 / f, w0 / f);
            for (ch, plane) in planes.iter_mut().enumerate() {
                for y in 0..h {
                    for x in 0..w {
                        plane[y * w + x] += cfg.anomaly_amplitude * signs[ch] * bump.profile(y, x, f);
                    }
                }
            }
        }
        Some(bump)
    } else {
        None
    };

    let maps = scales
        .into_iter()
        .enumerate()
        .map(|(s, planes)| {
            let f = 1 << s;
            let values = planes.into_iter().flatten().map(|v| v as f32).collect();
            FeatureMap::new(c, h0 / f, w0 / f, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((FeaturePyramid::new(id, maps)?, bump))
}

/// Generates every sample in memory, in manifest order.
pub fn generate_samples(cfg: &SyntheticConfig) -> Result<Vec<(FeaturePyramid, ManifestEntry)>> {
    cfg.validate()?;
    let num_train = cfg.num_normal - cfg.num_test_normal;
    let mut out = Vec::with_capacity(cfg.total_samples());
    for index in 0..cfg.total_samples() {
        let (label, split, local) = if index < num_train {
            (Label::Normal, Split::Train, index)
        } else if index < cfg.num_normal {
            (Label::Normal, Split::Test, index - num_train)
        } else {
            (Label::Anomalous, Split::Test, index - cfg.num_normal)
        };
        let split_name = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let id = format!("{}_{split_name}_{label}_{local:04}", cfg.class_name);
        let (pyramid, bump) = sample_pyramid(cfg, index, label.is_anomalous(), id.clone())?;
        let entry = ManifestEntry {
            feature_file_path: format!("samples/{id}.csfp").into(),
            sample_id: id,
            label,
            split,
            class_name: cfg.class_name.clone(),
            anomaly_center: bump.map(|b| b.center),
            anomaly_radius: bump.map(|b| b.radius),
        };
        out.push((pyramid, entry));
    }
    Ok(out)
}

/// Writes `manifest.toml` and `samples/*.csfp` under `out_dir`.
pub fn generate_synthetic(cfg: &SyntheticConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let samples = generate_samples(cfg)?;
    let sample_dir = out_dir.join("samples");
    fs::create_dir_all(&sample_dir).map_err(|e| CsFlowError::io_at(&sample_dir, e))?;
    let mut manifest = DatasetManifest::default();
    for (pyramid, entry) in samples {
        write_pyramid_file(&pyramid, out_dir.join(&entry.feature_file_path))?;
        manifest.entries.push(entry);
    }
    manifest.write(out_dir.join("manifest.toml"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            num_normal: 6,
            num_test_normal: 2,
            num_anomalous: 3,
            num_scales: 3,
            channels: 4,
            base_height: 16,
            base_width: 8,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_and_splits() {
        let samples = generate_samples(&small()).unwrap();
        assert_eq!(samples.len(), 9);
        let sig = samples[0].0.signature();
        assert_eq!(sig.dims, vec![(16, 8), (8, 4), (4, 2)]);
        let train = samples.iter().filter(|(_, e)| e.split == Split::Train).count();
        assert_eq!(train, 4);
        assert!(samples.iter().all(|(_, e)| e.label.is_anomalous() == e.anomaly_center.is_some()));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_samples(&small()).unwrap();
        let b = generate_samples(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 1;
        assert_ne!(a[0].0, generate_samples(&other).unwrap()[0].0);
    }

    #[test]
    fn fields_have_unit_variance() {
        let cfg = SyntheticConfig {
            num_normal: 40,
            num_test_normal: 0,
            num_anomalous: 0,
            num_scales: 3,
            channels: 4,
            base_height: 32,
            base_width: 32,
            ..Default::default()
        };
        let samples = generate_samples(&cfg).unwrap();
        for s in 0..3 {
            let vals: Vec<f64> =
                samples.iter().flat_map(|(p, _)| p.scales()[s].values().iter().map(|&v| f64::from(v))).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 0.1, "scale {s} mean {mean}");
            assert!((var - 1.0).abs() < 0.15, "scale {s} var {var}");
        }
    }

    #[test]
    fn bump_peaks_at_center() {
        let cfg = SyntheticConfig { anomaly_amplitude: 50.0, ..small() };
        let samples = generate_samples(&cfg).unwrap();
        let (p, e) = samples.iter().find(|(_, e)| e.label.is_anomalous()).unwrap();
        let [cy, cx] = e.anomaly_center.unwrap();
        let t = p.scales()[0].to_tensor();
        let energy = t.channel_energy();
        let argmax = energy.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!((argmax / t.width()) as f64, cy);
        assert_eq!((argmax % t.width()) as f64, cx);
    }

    #[test]
    fn zero_amplitude_matches_normal_statistics() {
        let cfg = SyntheticConfig { anomaly_amplitude: 0.0, ..small() };
        let samples = generate_samples(&cfg).unwrap();
        // same generator, only the bump is missing: energies comparable
        for (p, _) in &samples {
            let e: f64 = p.to_tensors().iter().map(|t| t.sum_squares()).sum::<f64>() / p.total_len() as f64;
            assert!(e > 0.2 && e < 3.0, "{e}");
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(generate_samples(&SyntheticConfig { channels: 7, ..small() }).is_err());
        assert!(generate_samples(&SyntheticConfig { base_height: 10, ..small() }).is_err());
    }

    #[test]
    fn writes_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small(), a.path()).unwrap();
        generate_synthetic(&small(), b.path()).unwrap();
        let ma = fs::read(a.path().join("manifest.toml")).unwrap();
        assert_eq!(ma, fs::read(b.path().join("manifest.toml")).unwrap());
        let m = DatasetManifest::from_toml_str(std::str::from_utf8(&ma).unwrap()).unwrap();
        for e in &m.entries {
            assert_eq!(
                fs::read(a.path().join(&e.feature_file_path)).unwrap(),
                fs::read(b.path().join(&e.feature_file_path)).unwrap()
            );
        }
    }
}
