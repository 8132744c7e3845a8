//! Differentiable view synthesis for self-supervised monocular depth:
//! warping geometry with learnable intrinsics, the photometric/smoothness
//! loss stack, exact gradients with a finite-difference checker, sub-pixel
//! upsampling, mask-guided disparity adjustment, weather augmentation, the
//! standard depth metric suite, and a network-free optimization harness on
//! synthetic scenes.

pub mod augment;
pub mod camera;
pub mod codec;
pub mod error;
pub mod grad;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod semantic;
pub mod toytrain;
pub mod upsample;

pub use error::{Error, Result};
pub use grid::{build_pyramid, Grid, Pyramid};
