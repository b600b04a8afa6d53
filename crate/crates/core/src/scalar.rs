//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar type the math is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    /// Convert from `f64`, panicking only if the value is not representable at all.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value not representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Feeds the exact bit pattern into a digest; used for snapshot hashing.
    fn bits_le(self) -> [u8; 8];
}

impl Scalar for f32 {
    fn bits_le(self) -> [u8; 8] {
        (self.to_bits() as u64).to_le_bytes()
    }
}

impl Scalar for f64 {
    fn bits_le(self) -> [u8; 8] {
        self.to_bits().to_le_bytes()
    }
}

/// Squared Euclidean distance between two equally sized slices.
#[inline]
pub fn sq_dist<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x - y;
            t * t
        })
        .sum()
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
