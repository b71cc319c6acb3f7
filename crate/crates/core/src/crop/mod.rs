//! The differentiable cropping layers: soft binarization, moment-based anchor
//! generation with its analytical backward pass, and RoI max pooling.

mod anchor;
mod binarize;
mod moments;
mod roi;

pub use anchor::{
    anchor_backward, anchor_region, Anchor, AnchorGradient, AnchorParams, AnchorSource,
    SIGMA_FLOOR,
};
pub use binarize::{soft_binarize, soft_binarize_derivative, soft_binarize_value};
pub(crate) use binarize::check_sigma as binarize_check;
pub use moments::{compute_moments, Moments};
pub use roi::{roi_pool, roi_pool_backward, RoiPooled};
