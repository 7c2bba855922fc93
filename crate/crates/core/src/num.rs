//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! code runs in `f32` or `f64`. The crate-root aliases pin `f64`, which is
//! what the CLI and the test suites use throughout: cross-replica dispersion
//! compares values that differ in the last few digits, and `f32` washes most
//! of that out.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the simulator core.
pub trait Scalar:
    Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from `f64` literals and accumulated counts.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from(v).expect("finite f64 converts to any Scalar")
    }

    /// Conversion from a usize count (worker counts, lengths).
    fn from_count(v: usize) -> Self {
        Self::from(v).expect("usize converts to any Scalar")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + std::fmt::Debug
        + std::fmt::Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Sum of a slice in index order.
pub(crate) fn sum<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}

/// Arithmetic mean in index order. Zero for an empty slice.
pub(crate) fn mean<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    sum(values) / T::from_count(values.len())
}
