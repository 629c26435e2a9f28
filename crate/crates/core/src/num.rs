//! Scalar abstraction for the analytical model.
//!
//! Tile arithmetic is done in integers; everything measured in seconds,
//! hertz, bytes/s or GOp/s goes through [`Scalar`] so the model can be
//! evaluated in `f64` (the default) or `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the performance model is evaluated in.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an integer count.
    #[inline]
    fn of_u64(n: u64) -> Self {
        Self::from_u64(n).expect("u64 representable as float")
    }

    /// Conversion from an `f64` literal or config value.
    #[inline]
    fn of_f64(x: f64) -> Self {
        Self::from_f64(x).expect("f64 representable as float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float representable as f64")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

/// Seconds to integer nanoseconds, rounding up. Representation noise below
/// a picosecond is ignored, so `0.01` maps to exactly 10 ms.
pub fn secs_to_ns<T: Scalar>(secs: T) -> u64 {
    let ns = (secs.as_f64() * 1e9 - 1e-3).ceil();
    if ns <= 0.0 {
        0
    } else {
        ns as u64
    }
}

pub fn ns_to_secs<T: Scalar>(ns: u64) -> T {
    T::of_f64(ns as f64 * 1e-9)
}

#[inline]
pub(crate) fn ceil_div(a: u64, b: u64) -> u64 {
    debug_assert!(b > 0);
    a.div_ceil(b)
}

/// ⌈log₂ n⌉ for n ≥ 1.
#[inline]
pub(crate) fn ceil_log2(n: u64) -> u32 {
    debug_assert!(n >= 1);
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}
