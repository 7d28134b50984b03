//! Multimodal neural style transfer by deep feature rotation.
//!
//! A content image is re-rendered in the style of a reference image by
//! optimizing its pixels against VGG19 content and Gram-matrix style losses.
//! The loss targets are built from feature maps rotated by 0°, 90°, 180° or
//! 270° and blended with the originals by a rotation weight λ, so a single
//! image pair yields a whole grid of distinct stylizations.
//!
//! Everything below the pipeline is implemented here from scratch: the
//! convolution kernels and their input gradients, the VGG19 trunk, the losses
//! and the optimizer.

pub mod dfr;
pub mod dfrw;
pub mod error;
pub mod fixture;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod tensor;
pub mod vgg;

pub use error::{Error, Result};
pub use tensor::Tensor4;
