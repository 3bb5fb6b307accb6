//! Dense-tensor compute engine with reverse-mode differentiation.
//!
//! The engine is deliberately small: it supports exactly the layer
//! primitives a shallow recurrent convolutional classifier needs
//! (convolution with stride/padding/dilation, batch normalization,
//! ReLU, max/adaptive-average pooling, linear, softmax, dropout), a
//! class-wise binary cross-entropy loss, SGD with momentum, and a
//! finite-difference gradient checker.
//!
//! Everything is generic over the element type so the same graph can
//! run in `f32` for training and `f64` for gradient verification.
//! Tensors are reference-counted handles to graph nodes; a model
//! instance (and thus its graph) is confined to one thread.

mod checkpoint;
mod conv;
mod error;
mod gradcheck;
mod init;
mod loss;
mod norm;
mod ops;
mod optim;
mod pool;
mod tensor;

pub use checkpoint::{read_rcnm, write_rcnm, Checkpoint, TensorEntry, RCNM_MAGIC, RCNM_VERSION};
pub use conv::{conv2d, conv_output_extent, ConvParams};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_default_step};
pub use init::{kaiming_uniform, uniform_in};
pub use loss::{loss_eq9, loss_softmax_ce, one_hot, LossKind, LOSS_PROB_EPS};
pub use norm::{batchnorm2d, BatchNormState};
pub use ops::{
    add, bilinear_upsample2d, clamp, concat_channels, div_scalar_broadcast, flatten, ln, linear,
    mean_all, mul, mul_channel_broadcast, mul_const_sum_channels, mul_scalar_broadcast, neg,
    normalize_spatial_max, relu, reshape, scale, select_index, softmax_rows, softplus, sub,
    sum_all,
};
pub use ops::dropout;
pub use optim::OptimizerState;
pub use pool::{adaptive_avgpool2d, maxpool2d};
pub use tensor::{Real, Tensor};
