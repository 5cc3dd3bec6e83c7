//! Scalar abstraction: all numeric code is generic over `Real`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("value not representable")
    }

    /// Widening (or identity) conversion to `f64`.
    #[inline]
    fn f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("finite scalar")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Send + Sync + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        let x: f32 = Real::of(0.25);
        assert_eq!(x, 0.25f32);
        assert_eq!(x.f64(), 0.25f64);
        let y: f64 = Real::of(-3.5);
        assert_eq!(y, -3.5);
    }
}
