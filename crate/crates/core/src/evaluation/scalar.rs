use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, Num, ToPrimitive};

/// Numeric type the metrics are computed in.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    fn from_count(n: u64) -> Self;
    fn to_f64(&self) -> f64;
}

/// Scalars with logarithms and square roots (needed by NMI).
pub trait RealScalar: Scalar + Float {}

impl<T: Scalar + Float> RealScalar for T {}

impl Scalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for Ratio<i128> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i128::from(n))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

pub(crate) fn ratio<T: Scalar>(num: u64, den: u64) -> T {
    T::from_count(num) / T::from_count(den)
}
