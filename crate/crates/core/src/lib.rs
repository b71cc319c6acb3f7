//! Saliency-guided automatic image cropping.
//!
//! A small U-Net predicts a saliency map; the map is soft-binarized and its
//! spatial moments define an anchor window; a regression head on RoI-pooled
//! bottleneck features predicts four offset coefficients that grow or shrink
//! the anchor into the final crop. Everything, including the reverse-mode
//! autodiff tape, is implemented in f64 on the CPU.

pub mod checkpoint;
pub mod crop;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod imaging;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod offsets;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use geometry::{Rect, SaliencyMap};
pub use imaging::Image;
pub use model::{predict_crop, Architecture, CropSettings, HeadConfig, Prediction};
pub use offsets::OffsetCoefficients;
pub use params::{GroupMask, ModelParams, ParamGroup};
pub use tensor::Tensor;
pub use unet::UNetConfig;
