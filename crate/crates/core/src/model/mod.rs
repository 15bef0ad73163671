//! Projection, multi-scale pyramid with a pluggable temporal context block,
//! and shared classification/regression heads.

mod accounting;
mod config;
mod forward;
mod params;

pub use accounting::{count_macs, mac_breakdown, tcm_macs, MacBreakdown};
pub use config::{ModelConfig, TcmVariant, PROJECTION_KERNEL};
pub use forward::{
    build_pyramid, heads_forward, model_forward, project_features, record_forward, FeaturePyramid, HeadOutputs,
    LevelOutput, RecordedForward,
};
pub use params::{
    count_params, init_params, ConvBlock, ConvParams, ModelParams, NormParams, ParamTree, TcmParams, CLASS_PRIOR,
};
