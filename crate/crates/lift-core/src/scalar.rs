//! Floating-point abstraction over the two evaluation modes.
//!
//! Storage is `f32` everywhere; `f64` exists only so that gradients can be
//! verified against central finite differences without drowning in rounding
//! noise.

use core::fmt::Debug;
use num_traits::Float;

/// Element type of a [`crate::Tensor`].
pub trait Scalar: Float + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f64(self) -> f64 {
        self
    }
}
