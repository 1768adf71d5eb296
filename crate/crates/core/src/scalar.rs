use std::fmt::{Debug, Display};

use num_traits::Float;
use rand::Rng;

/// Coordinate type of a dataset.
///
/// Coordinates may be stored as `f32` or `f64`; every distance and angle is
/// evaluated in `f64` regardless of the storage type.
pub trait Scalar: Float + Debug + Display + Default + Send + Sync + 'static {
    /// Lossless widening to `f64` (for the supported float types).
    fn as_f64(self) -> f64;

    /// Nearest representable value to `x`.
    fn from_f64(x: f64) -> Self;

    /// Uniform sample from `[0, 1)` drawn natively at this precision.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }
}
