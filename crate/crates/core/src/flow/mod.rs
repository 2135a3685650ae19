//! The cross-scale normalizing flow.

pub mod checkpoint;
pub mod clamp;
pub mod config;
pub mod conv;
pub mod coupling;
pub mod model;
pub mod params;
pub mod resample;
pub mod subnet;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use clamp::{soft_clamp, soft_clamp_grad};
pub use config::FlowConfig;
pub use conv::Conv2d;
pub use coupling::CouplingBlock;
pub use model::{FlowModel, LatentResult};
pub use params::{ParamKind, Parameterized};
pub use subnet::{CrossScaleSubnet, SubnetOutput};

/// Builds a freshly initialized model from `config`.
pub fn build_model(config: FlowConfig) -> crate::error::Result<FlowModel> {
    FlowModel::build(config)
}
