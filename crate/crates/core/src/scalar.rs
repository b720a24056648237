//! Element type abstraction: f32 is the working precision, f64 is the
//! verification precision used by the gradient-check harness.

use std::fmt::Debug;

/// Floating-point element of a [`crate::tensor::Tensor`].
///
/// Everything numeric in this crate is generic over `Scalar` so the same
/// forward/backward code runs in 32-bit (training, inference) and in 64-bit
/// (finite-difference verification).
pub trait Scalar:
    num_traits::Float + Debug + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_f32(v: f32) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
