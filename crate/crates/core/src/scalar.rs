//! Floating-point scalar abstraction shared by every numeric kernel.

use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real floating-point type the library can compute in: `f32` or `f64`.
///
/// The bound combines `num_traits::Float` for elementwise arithmetic with
/// faer's `RealField` for the dense decompositions.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + faer::traits::RealField
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or statistic.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Scalar")
    }

    /// Lossless widening to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("every Scalar widens to f64")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
