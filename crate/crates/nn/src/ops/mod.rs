//! Forward and reverse-mode kernels for every layer kind the models use.
//!
//! All kernels operate on single `C×H×W` samples.

mod activation;
mod conv;
mod pool;

pub use activation::{leaky_relu_backward, leaky_relu_forward, sigmoid, sigmoid_backward, sigmoid_forward};
pub use conv::{
    conv2d_backward, conv2d_forward, conv_out_extent, deconv2d_backward, deconv2d_forward, deconv_out_extent, ConvGrads,
};
pub use pool::{avgpool2_backward, avgpool2_forward, maxpool2_backward, maxpool2_forward, pool_out_extent};
