//! Stain-space decomposition, image quality metrics, loss kernels and
//! HER2-level retrieval evaluation for H&E to IHC image translation.
//!
//! All numerics run in `f64`. Images are unit-interval RGB internally and
//! only become 8-bit at file boundaries.

pub mod error;
pub mod eval;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod nn;
mod par;
pub mod report;
pub mod stain;
pub mod weights;

pub use crate::error::{Error, Result};
pub use crate::eval::{FeatureLibrary, FeatureRecord, Neighbor};
pub use crate::image::{HedImage, RgbImage, DEFAULT_EPS};
pub use crate::loss::{LossBreakdown, LossComponents, LossWeights};
pub use crate::metrics::{MetricReport, Psnr, SsimParams};
pub use crate::nn::{FusionBlock, ModConvParams, Tensor4};
pub use crate::stain::{ChannelSelector, Stain, StainBasis};

pub use crate::par::parallelism_enabled;
