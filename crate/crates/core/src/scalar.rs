//! Floating-point scalar abstraction shared by the learning and unlearning code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distributions::uniform::SampleUniform;

/// Real scalar the model, aggregation and contribution math are generic over.
///
/// Everything that leaves the process (hash digests, checkpoints, the
/// off-chain store) is serialized through `f64`, so a `Scalar` must convert
/// losslessly into `f64`. Both `f32` and `f64` do.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + SampleUniform + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Widening conversion used by every canonical serialization.
    fn to_f64_lossless(self) -> f64;

    /// Narrowing conversion from the canonical `f64` representation.
    fn from_f64_lossy(v: f64) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

pub(crate) fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_widens_exactly() {
        let v = 0.1f32;
        assert_eq!(f32::from_f64_lossy(v.to_f64_lossless()), v);
    }

    #[test]
    fn finiteness_check() {
        assert!(all_finite(&[1.0, -2.0]));
        assert!(!all_finite(&[1.0f32, f32::NAN]));
    }
}
