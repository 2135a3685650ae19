use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::feature_pyramid::FeaturePyramid;
use crate::flow::resample::resize_bilinear;
use crate::flow::FlowModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationMode {
    /// Upsample the finest scale's map only.
    #[default]
    Finest,
    /// Sum the maps of all scales after resizing each to the target.
    AllScales,
}

/// Latent energy per spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMap {
    /// Single-channel grids `||z^s_{i,j}||^2`, finest first.
    pub scales: Vec<Tensor>,
    /// Single-channel map at the requested target size.
    pub full: Option<Tensor>,
}

impl LocalizationMap {
    /// `(row, col)` of the maximum of the full-resolution map, or of the
    /// finest grid when none was requested. Earliest position wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let m = self.full.as_ref().unwrap_or(&self.scales[0]);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in m.data().iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0 / m.width(), best.0 % m.width())
    }
}

/// Channel-wise sum of squares of one latent scale.
pub fn energy_map(z: &Tensor) -> Tensor {
    Tensor::from_vec(1, z.height(), z.width(), z.channel_energy())
}

pub fn localize_latent(latent: &[Tensor], target: Option<(usize, usize)>, mode: LocalizationMode) -> LocalizationMap {
    let scales: Vec<Tensor> = latent.iter().map(energy_map).collect();
    let full = target.map(|(h, w)| match mode {
        LocalizationMode::Finest => resize_bilinear(&scales[0], h, w),
        LocalizationMode::AllScales => {
            let mut acc = Tensor::zeros(1, h, w);
            for s in &scales {
                acc.add_assign(&resize_bilinear(s, h, w));
            }
            acc
        }
    });
    LocalizationMap { scales, full }
}

/// Finest-scale localization upsampled to `target` `(height, width)`.
pub fn localize(model: &FlowModel, y: &FeaturePyramid, target: (usize, usize)) -> Result<LocalizationMap> {
    localize_with(model, y, Some(target), LocalizationMode::Finest)
}

pub fn localize_with(
    model: &FlowModel,
    y: &FeaturePyramid,
    target: Option<(usize, usize)>,
    mode: LocalizationMode,
) -> Result<LocalizationMap> {
    model.check_signature(&y.signature())?;
    let latent = model.forward(y)?;
    Ok(localize_latent(&latent.latent, target, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::LatentResult;
    use crate::scoring::{score_latent, ScoreMode};

    #[test]
    fn single_hot_column() {
        let mut z = Tensor::zeros(3, 4, 5);
        for c in 0..3 {
            z.set(c, 2, 1, 1.0 + c as f64);
        }
        let m = localize_latent(&[z], None, LocalizationMode::Finest);
        let g = &m.scales[0];
        assert_eq!(g.get(0, 2, 1), 14.0);
        assert_eq!(g.sum(), 14.0);
        assert_eq!(m.argmax(), (2, 1));
    }

    #[test]
    fn zero_latent_gives_zero_map() {
        let m = localize_latent(
            &[Tensor::zeros(2, 4, 4), Tensor::zeros(2, 2, 2)],
            Some((8, 8)),
            LocalizationMode::AllScales,
        );
        assert!(m.full.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decomposes_energy_score() {
        let a = Tensor::from_vec(2, 2, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0, 1.0, 1.0]);
        let b = Tensor::from_vec(2, 1, 1, vec![2.0, -2.0]);
        let latent = vec![a, b];
        let m = localize_latent(&latent, None, LocalizationMode::Finest);
        let d = 10.0;
        let from_maps: f64 = m.scales.iter().map(|g| g.sum()).sum::<f64>() / (2.0 * d);
        let r = LatentResult { latent, logdet: 0.0 };
        assert!((from_maps - score_latent(&r, ScoreMode::ZEnergy)).abs() < 1e-15);
    }

    #[test]
    fn upsampled_size() {
        let m = localize_latent(&[Tensor::zeros(2, 4, 4)], Some((16, 12)), LocalizationMode::Finest);
        let f = m.full.unwrap();
        assert_eq!((f.channels(), f.height(), f.width()), (1, 16, 12));
    }
}
