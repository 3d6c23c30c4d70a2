//! Scalar abstraction for the numeric kernels.
//!
//! All bound arithmetic is written against [`Scalar`] so the same code runs
//! in `f32` and `f64`. Certified results in the CLI and tests use `f64`.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the library: `f32` or `f64`.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    /// Convert an `f64` constant, panicking only on values no float type holds.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable")
    }

    /// `max(x, 0)`, written `[x]_+` in the bound recursions.
    #[inline]
    fn pos(self) -> Self {
        self.max(Self::zero())
    }

    /// `max(-x, 0)`, written `[x]_-`; nonnegative, with `x = pos(x) - neg(x)`.
    #[inline]
    fn neg_part(self) -> Self {
        (-self).max(Self::zero())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pos_neg_split() {
        assert_eq!(3.5f64.pos(), 3.5);
        assert_eq!(3.5f64.neg_part(), 0.0);
        assert_eq!((-2.0f64).pos(), 0.0);
        assert_eq!((-2.0f64).neg_part(), 2.0);
        assert_eq!(0.0f64.pos(), 0.0);
        assert_eq!(0.0f64.neg_part(), 0.0);
    }

    #[test]
    fn of_round_trips_for_f32() {
        assert_eq!(<f32 as Scalar>::of(0.5), 0.5f32);
    }
}
