//! Residual-CNN despeckling for SAR imagery.
//!
//! The network predicts the log-domain speckle of a noisy amplitude image;
//! the clean estimate is recovered as `exp(ln y - R(ln y) - c)` where `c` is
//! the mean of the log-speckle. The crate covers speckle simulation,
//! training-set construction, from-scratch training with hand-written
//! backward passes, tiled inference and quality metrics.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod raster;
pub mod speckle;
pub mod tensor;

pub use error::{Error, Result};
pub use model::SarCnnModel;
pub use raster::Raster;
pub use speckle::{Format, SpeckleConfig};
pub use tensor::{Dims, Real, Tensor4};
