//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
///
/// Everything numeric in this crate (linear algebra, the SDP solver, the
/// optics model, behaviors, entropy bounds) is written against this trait.
/// The concrete `f64` aliases at the crate root are what the pipeline uses.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("representable integer")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn half<T: Scalar>() -> T {
        T::lit(0.5)
    }

    #[test]
    fn literals_round_trip() {
        assert_eq!(half::<f64>(), 0.5);
        assert_eq!(half::<f32>(), 0.5f32);
        assert_eq!(f32::from_usize_lossy(7).to_f64_lossy(), 7.0);
    }
}
