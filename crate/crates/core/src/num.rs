//! Scalar abstraction for the numeric kernels.
//!
//! Everything that does arithmetic (rewards, advantages, policy math) is
//! generic over [`Real`] so the same code runs at `f32` or `f64` precision.
//! Text handling, world generation, and serialization stay concrete.

use std::fmt::{Debug, Display};

/// Floating-point scalar the numeric kernels operate on.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into the working scalar type.
///
/// Panics only if the constant is not representable, which cannot happen for
/// the finite literals this crate uses.
pub fn real<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("finite f64 constant must convert to the working scalar")
}

/// Converts an integer count into the working scalar type.
pub fn count<S: Real>(n: usize) -> S {
    S::from_usize(n).expect("count must convert to the working scalar")
}
