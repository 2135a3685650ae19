use serde::{Deserialize, Serialize};

use crate::error::{CsFlowError, Result};
use crate::feature_pyramid::ShapeSignature;

/// Architecture of a cross-scale flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub num_scales: usize,
    pub channels: usize,
    pub num_blocks: usize,
    /// One odd kernel size per block.
    pub kernel_sizes: Vec<usize>,
    pub clamp_alpha: f64,
    /// Hidden width is `hidden_channel_factor * channels / 2`.
    pub hidden_channel_factor: usize,
    pub leaky_slope: f64,
    /// Use the first block coefficient in the exponent of the second affine
    /// step (and the second coefficient only for its shift). Off by default,
    /// which uses the second coefficient for both.
    #[serde(default)]
    pub shared_first_gamma: bool,
    pub seed: u64,
}

impl FlowConfig {
    pub const DEFAULT_BLOCKS: usize = 4;

    /// Defaults: 4 blocks with kernels `[3, 3, 3, 5]`, alpha 3, hidden factor 2,
    /// leaky slope 0.1.
    pub fn new(num_scales: usize, channels: usize) -> Self {
        Self {
            num_scales,
            channels,
            num_blocks: Self::DEFAULT_BLOCKS,
            kernel_sizes: Self::default_kernel_sizes(Self::DEFAULT_BLOCKS),
            clamp_alpha: 3.0,
            hidden_channel_factor: 2,
            leaky_slope: 0.1,
            shared_first_gamma: false,
            seed: 0,
        }
    }

    pub fn for_signature(sig: &ShapeSignature) -> Self {
        Self::new(sig.num_scales(), sig.channels)
    }

    /// 3x3 kernels for every block except a 5x5 final block.
    pub fn default_kernel_sizes(num_blocks: usize) -> Vec<usize> {
        (0..num_blocks).map(|i| if i + 1 == num_blocks { 5 } else { 3 }).collect()
    }

    pub fn with_blocks(mut self, num_blocks: usize) -> Self {
        self.num_blocks = num_blocks;
        self.kernel_sizes = Self::default_kernel_sizes(num_blocks);
        self
    }

    pub fn with_kernel_sizes(mut self, kernel_sizes: Vec<usize>) -> Self {
        self.num_blocks = kernel_sizes.len();
        self.kernel_sizes = kernel_sizes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_channel_factor * self.channels / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CsFlowError::InvalidConfig(m));
        if self.num_scales == 0 {
            return bad("num_scales must be at least 1".into());
        }
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return bad(format!("channels must be even and >= 2, got {}", self.channels));
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1".into());
        }
        if self.kernel_sizes.len() != self.num_blocks {
            return bad(format!("{} kernel sizes given for {} blocks", self.kernel_sizes.len(), self.num_blocks));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|k| *k % 2 == 0) {
            return bad(format!("kernel sizes must be odd, got {k}"));
        }
        if !(self.clamp_alpha.is_finite() && self.clamp_alpha > 0.0) {
            return bad(format!("clamp_alpha must be positive, got {}", self.clamp_alpha));
        }
        if self.hidden_channel_factor == 0 {
            return bad("hidden_channel_factor must be at least 1".into());
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite".into());
        }
        Ok(())
    }

    /// Checks that a dataset shape can be processed by this architecture.
    pub fn check_signature(&self, sig: &ShapeSignature) -> Result<()> {
        if sig.channels != self.channels || sig.num_scales() != self.num_scales {
            return Err(CsFlowError::ShapeMismatch(format!(
                "model expects {} scales of {} channels, data has {sig}",
                self.num_scales, self.channels
            )));
        }
        Ok(())
    }
}
