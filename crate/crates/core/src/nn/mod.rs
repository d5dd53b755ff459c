//! Deterministic tensor, layer and optimizer kernels with exact analytic
//! gradients for every layer the network uses.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
pub mod gradcheck;
mod init;
mod loss;
mod scalar;
mod tensor;

pub use activation::Activation;
pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{BatchNormCache, BatchNormGrads, BatchNormParams, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{conv2d, ConvCache, ConvGrads, ConvLayer, KERNEL};
pub use dense::{dense, DenseCache, DenseGrads, DenseLayer};
pub use dropout::{check_rate as check_dropout_rate, dropout, DropoutMask};
pub use gradcheck::grad_check;
pub use init::{init_uniform, INIT_BOUND};
pub use loss::{bce_loss, LossValue, CLIP};
pub use scalar::Scalar;
pub use tensor::{Batch, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
