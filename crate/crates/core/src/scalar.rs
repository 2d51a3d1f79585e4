//! Floating-point abstraction shared by the network, trainer and analysis code.

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};
use std::iter::Sum;

/// Floating point: f32 or f64.
pub trait Scalar: NdFloat + FromPrimitive + ToPrimitive + Sum + Default {
    /// Converts an `f64` literal. Never fails for the two implementors.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Scalar converts to f64")
    }

    /// Short name used in file metadata.
    fn type_name() -> &'static str;
}

impl Scalar for f32 {
    fn type_name() -> &'static str {
        "f32"
    }
}

impl Scalar for f64 {
    fn type_name() -> &'static str {
        "f64"
    }
}
