//! Working scalar type for all numeric code.
//!
//! Every math module in this crate is generic over [`Scalar`] so the same
//! kernels run in `f64` (the default, used for gradient checking and all
//! shipped tools) or `f32`. Concrete aliases live at the crate root.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the pipeline computes in.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Shortest name of the concrete type, recorded in binary file headers.
    const NAME: &'static str;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn real<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant converts to scalar")
}

/// Convert a count into the working scalar type.
#[inline]
pub fn count<S: Scalar>(n: usize) -> S {
    S::from_usize(n).expect("usize converts to scalar")
}
