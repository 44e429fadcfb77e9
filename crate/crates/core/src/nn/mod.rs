//! Numeric kernels with hand-derived backward passes.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod init;
pub mod relu;

pub use adam::{adam_step, AdamState};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_infer, BatchNormCache, BatchNormParams, BnMode};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use init::he_init;
pub use relu::{relu_backward, relu_forward};
