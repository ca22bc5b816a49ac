//! Convolutional and residual variants.

pub(crate) mod conv;
mod resnet;

pub use conv::{build_patch_map, ConvSpec, PatchMap, PatchTopology};
pub use resnet::ResidualSpec;
mod probes;

pub use probes::{forward_cnn, forward_resnet, residual_depth_sweep, residual_product_norm, spectral_product_probe_resnet};
