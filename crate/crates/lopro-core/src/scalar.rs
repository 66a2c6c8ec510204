//! Scalar abstraction for the numerical kernels.

use num_traits::Float;

/// Floating-point element type accepted by the generic kernels.
///
/// Implemented for `f32` and `f64`. The pipeline itself runs on `f64`
/// (see [`crate::Mat`]); the generic layer exists so the transform and
/// factorization kernels can also operate on 32-bit storage tensors.
pub trait Scalar: Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    /// Converts from f64, rounding to the nearest representable value.
    fn from_f64(x: f64) -> Self;

    /// Widens to f64 exactly (both supported types embed into f64).
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
