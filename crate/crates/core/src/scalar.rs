//! Scalar abstraction shared by the fusion and evaluation math.
//!
//! Every metric in this crate is written once against [`Scalar`] and can be
//! evaluated in `f32`, `f64`, or exactly in [`Exact`] rationals. The exact
//! instantiation is what the oracle tests compare against.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Exact rational scalar. `i128` keeps the least common multiple of the
/// denominators produced by average precision over a few hundred frames
/// in range.
pub type Exact = Ratio<i128>;

/// Arithmetic scalar: a signed ordered field with lossless small-integer
/// construction.
pub trait Scalar:
    Num + Signed + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    fn half() -> Self {
        Self::one() / (Self::one() + Self::one())
    }

    /// Lossy conversion used only at presentation and I/O boundaries.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(v: f64) -> Self;

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Scalar for f32 {
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

impl Scalar for Exact {
    fn from_f64_lossy(v: f64) -> Self {
        Ratio::approximate_float(v).expect("finite float in i128 range")
    }
}

/// Mean of a slice; `None` when empty.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + v);
    Some(sum / T::from_count(values.len()))
}

/// Population variance; `None` when empty.
pub fn population_variance<T: Scalar>(values: &[T]) -> Option<T> {
    let m = mean(values)?;
    let ss = values
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - m) * (v - m));
    Some(ss / T::from_count(values.len()))
}
