use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssignOps, NumCast};

/// Element type for tensors: f32 for training, f64 for gradient checks.
pub trait Scalar:
    Float + NumAssignOps + NumCast + Copy + Debug + Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 -> scalar conversion")
    }

    // Named to avoid colliding with `ToPrimitive::to_f64`, which `Float`
    // brings into scope with an `Option` return type.
    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("scalar -> f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
