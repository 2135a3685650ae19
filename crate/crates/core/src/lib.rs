//! Cross-scale normalizing flows for semi-supervised defect detection on
//! multi-scale feature pyramids.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod evaluation;
pub mod feature_pyramid;
pub mod flow;
pub mod scoring;
pub mod tensor;
pub mod training;

pub use error::{CsFlowError, Result};
pub use feature_pyramid::{FeaturePyramid, Label, Split};
pub use flow::{build_model, FlowConfig, FlowModel};
pub use tensor::Tensor;
