//! CPU laboratory for the FFA-Net single-image dehazing architecture.
//!
//! The crate covers the full loop end to end on one machine:
//!
//! - [`tensor`] / [`tape`]: dense N×C×H×W tensors and a minimal tape-based
//!   reverse-mode autodiff with exactly the primitives the network needs.
//! - [`model`]: the feature-attention network itself (channel and pixel
//!   attention, basic blocks, groups, fusion, global residual), with every
//!   piece switchable for ablations.
//! - [`haze`]: synthetic data from the atmospheric scattering model
//!   I = J·t + A·(1−t), plus patch extraction, augmentation and PPM I/O.
//! - [`metrics`]: reference PSNR and SSIM.
//! - [`train`]: L1 loss, Adam, cosine-annealed learning rate, and bit-exact
//!   checkpointing.
//! - [`gradcheck`]: the central finite-difference oracle the test suite uses
//!   to verify every backward rule in 64-bit mode.

pub mod error;
pub mod gradcheck;
mod kernels;
pub mod parallel;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub mod haze;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Gradients, Padding, Tape, ValueId};
pub use tensor::Tensor;
