//! Scalar abstraction: every numeric routine in this crate is generic over a
//! floating-point type satisfying [`Scalar`].

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};

/// Floating-point scalar usable throughout the crate (`f32`, `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into `T`. Panics only if `T` cannot represent
/// ordinary finite constants, which no [`Scalar`] of interest does.
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite literal must be representable")
}
