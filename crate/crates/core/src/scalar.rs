//! Scalar abstraction for the numerical kernels.
//!
//! The rate, duality and measure code is written against [`Scalar`] so it can
//! run in `f32` or `f64`. Monte Carlo studies and the coupling machinery are
//! pinned to `f64`.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    'static
    + Send
    + Sync
    + Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + LowerExp
{
    /// Lossy conversion from an `f64` literal or draw.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_u64(n: u64) -> Self {
        Self::from_u64(n).expect("u64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
