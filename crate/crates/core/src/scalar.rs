//! Scalar abstraction for the numeric kernels.
//!
//! Model math (forward passes, losses, optimizers) is generic over [`Scalar`]
//! so the same kernels run in `f32` or `f64`. Training and verification paths
//! use the crate-root [`crate::Real`] alias (`f64`): finite-difference gradient
//! checks are only meaningful in double precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable by the model kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; exact for `f64` itself.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    /// Widening conversion to `f64`.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `log(1 + exp(x))`.
///
/// Computed as `max(x, 0) + ln(1 + exp(-|x|))` so it neither overflows for
/// large positive `x` nor underflows to `-inf`-adjacent garbage for large
/// negative `x`.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Stable `-log(sigmoid(x))`, i.e. `softplus(-x)`.
pub fn neg_log_sigmoid<T: Scalar>(x: T) -> T {
    softplus(-x)
}

/// Logistic sigmoid, computed through the stable branch.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-5.0f64, -1.0, 0.0, 0.3, 2.0, 10.0] {
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn neg_log_sigmoid_is_finite_for_extreme_arguments() {
        assert!((neg_log_sigmoid(-1000.0f64) - 1000.0).abs() < 1e-9);
        assert!(neg_log_sigmoid(1000.0f64) >= 0.0);
        assert!(neg_log_sigmoid(1000.0f64) < 1e-8);
    }

    #[test]
    fn sigmoid_symmetry() {
        for &x in &[-30.0f64, -2.0, 0.0, 1.5, 30.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn works_in_single_precision() {
        let x: f32 = 0.1;
        assert!((neg_log_sigmoid(x) - 0.644_396_6).abs() < 1e-5);
    }
}
