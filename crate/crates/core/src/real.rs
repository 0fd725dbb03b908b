//! Scalar abstraction: the whole library is generic over `f32`/`f64`.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Floating-point scalar used throughout the crate.
///
/// `f64` is what you want for anything numerical-accuracy sensitive
/// (training, finite-difference checks); `f32` works for cheap evaluation.
pub trait Real: RealField + FromPrimitive + Copy + Default {
    /// Convert an `f64` constant into this scalar type.
    fn of(x: f64) -> Self;

    /// Lossy conversion back to `f64` (used by serialization and reporting).
    fn to_f64(self) -> f64;

    fn is_finite_real(self) -> bool;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite_real(self) -> bool {
        self.is_finite()
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite_real(self) -> bool {
        self.is_finite()
    }
}
