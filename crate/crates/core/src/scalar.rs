//! Scalar abstraction so the whole numeric stack runs at f32 or f64.
//!
//! Training runs at f32; gradient checking and test oracles run at f64,
//! where central differences are quiet enough for tight tolerances.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating point scalar usable throughout the tensor/model stack.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from f64 (exact for f64, rounded for f32).
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    /// Widening conversion to f64.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
