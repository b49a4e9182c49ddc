//! Scalar abstraction shared by every filter.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating-point scalar the filters are generic over (`f32` or `f64`).
pub trait Scalar: RealField + Copy + ToPrimitive + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` constant into this scalar type.
    fn lit(v: f64) -> Self {
        nalgebra::convert(v)
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
