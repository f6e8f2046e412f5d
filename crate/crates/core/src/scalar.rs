//! Floating-point element type shared by every kernel and model component.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element type of a [`Tensor`](crate::tensor::Tensor).
///
/// Everything above the kernels is written against this trait, so the same
/// model can be instantiated at `f32` or `f64`. Verification runs at `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Only used with values representable in every
    /// supported precision.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic function computed without overflow for large `|x|`.
#[inline]
pub fn stable_sigmoid<T: Scalar>(x: T) -> T {
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
    fn sigmoid_extremes_stay_finite() {
        assert_eq!(stable_sigmoid(0.0f64), 0.5);
        assert!((stable_sigmoid(100.0f64) - 1.0).abs() < 1e-12);
        assert!(stable_sigmoid(-1000.0f64) >= 0.0);
        assert_eq!(stable_sigmoid(1000.0f64), 1.0);
        assert!(stable_sigmoid(-1000.0f32).is_finite());
    }
}
