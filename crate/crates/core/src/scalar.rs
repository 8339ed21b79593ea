//! Numeric abstraction for vote proportions and metric values.
//!
//! Vote proportions are ratios `k / n` of annotator counts, so any type that
//! can represent such a ratio works: `f32`, `f64`, or an exact rational.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// A probability-like value built from annotator counts.
pub trait Probability: Num + Copy + PartialOrd + ToPrimitive + Debug + Send + Sync {
    /// The proportion `count / total`. `total` must be non-zero.
    fn ratio(count: usize, total: usize) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn is_unit_interval(self) -> bool {
        self >= Self::zero() && self <= Self::one()
    }
}

impl Probability for f64 {
    fn ratio(count: usize, total: usize) -> Self {
        count as f64 / total as f64
    }
}

impl Probability for f32 {
    fn ratio(count: usize, total: usize) -> Self {
        count as f32 / total as f32
    }
}

impl Probability for Ratio<i64> {
    fn ratio(count: usize, total: usize) -> Self {
        Ratio::new(count as i64, total as i64)
    }
}

impl Probability for Ratio<u64> {
    fn ratio(count: usize, total: usize) -> Self {
        Ratio::new(count as u64, total as u64)
    }
}
