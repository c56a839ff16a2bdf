//! Differentiable layer kernels with hand-derived gradients.

pub mod batchnorm;
pub mod conv;
pub mod elementwise;
pub mod receptive;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BNState, BnCache, BnGrads, Mode};
pub use conv::{
    conv2d, conv2d_backward, conv2d_backward_ext, deconv2d, deconv2d_backward, ConvGrads, ConvSpec,
};
pub use elementwise::{
    add, concat_channels, maxpool2, maxpool2_backward, relu, relu_backward, split_channels,
    PoolIndices,
};
pub use receptive::{receptive_field, FieldLayer};
