//! Scalar abstraction for the numeric core.
//!
//! Every numeric routine in this crate is generic over [`Scalar`] so the same
//! code runs in f32 (training) and f64 (gradient checking and oracles).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type usable inside tensors.
pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Gauss error function, used by the exact GELU form.
    fn erf(self) -> Self;

    /// Lossless-enough conversion from f64 (rounds to nearest for f32).
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    /// Widening conversion to f64 for accumulation and reporting.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        // erf computed in f64 keeps the f32 result correctly rounded.
        libm::erf(self as f64) as f32
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_values() {
        // erf(1) = 0.8427007929497149, erf(0) = 0.
        assert!((Scalar::erf(1.0f64) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert_eq!(Scalar::erf(0.0f64), 0.0);
        assert!((Scalar::erf(1.0f32) - 0.842_700_8f32).abs() < 1e-6);
        // Odd function.
        assert_eq!(Scalar::erf(-0.5f64), -Scalar::erf(0.5f64));
    }
}
