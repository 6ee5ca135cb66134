//! Scalar abstractions shared by the policy, plant and controller code.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Field-like scalar usable by the exact parts of the power policy
/// (workload sums, speed quantization, period reclaiming).
///
/// Implemented for `f32`, `f64` and `Ratio<i64>`.
pub trait Scalar: Num + Copy + PartialOrd + Debug + FromPrimitive + ToPrimitive {
    /// Distance under which a computed speed counts as equal to a discrete level.
    fn level_tolerance() -> Self;

    fn abs_diff(self, other: Self) -> Self {
        if self >= other {
            self - other
        } else {
            other - self
        }
    }
}

impl Scalar for f64 {
    fn level_tolerance() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    // 1e-12 is far below f32 resolution near 1.0
    fn level_tolerance() -> Self {
        1e-6
    }
}

impl Scalar for Ratio<i64> {
    fn level_tolerance() -> Self {
        Ratio::from_integer(0)
    }
}

/// Floating-point scalar for the parts that need transcendental functions.
pub trait Real: Scalar + Float {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}
