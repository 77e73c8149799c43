//! Scalar abstraction shared by the geometry, dynamics, solver and network code.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating point type the numerical core is generic over: `f32` or `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Tolerance below which a vector norm is treated as zero.
    fn tiny() -> Self;
}

impl Scalar for f32 {
    fn tiny() -> Self {
        1e-6
    }
}

impl Scalar for f64 {
    fn tiny() -> Self {
        1e-12
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
