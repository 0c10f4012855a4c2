//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the model and its estimators are generic over.
///
/// Implemented for `f32` and `f64`. Distribution functions (Student t,
/// chi-square) are always evaluated in `f64` and converted back.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// A tolerance that is `floor` for `f64` but never tighter than a small
    /// multiple of this type's machine epsilon.
    #[inline]
    fn tol(floor: f64) -> Self {
        let eps = Self::epsilon() * Self::lit(64.0);
        Self::lit(floor).max(eps)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

/// Sample standard deviation with divisor `n - 1`; zero for fewer than two
/// values. Deviations are taken from the first value before averaging, so
/// identical inputs give exactly zero.
pub fn sample_sd<T: Scalar>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let shifted: Vec<T> = xs.iter().map(|&x| x - xs[0]).collect();
    let m = mean(&shifted);
    let ss: T = shifted.iter().map(|&d| (d - m) * (d - m)).sum();
    (ss / T::from_usize_lossy(xs.len() - 1)).sqrt()
}
