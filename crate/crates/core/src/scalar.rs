//! Scalar abstraction so the control kernels run over `f32` or `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type the simulator can be instantiated with.
pub trait Scalar:
    Float + FloatConst + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Converts an `f64` literal into `Self`.
    fn lit(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize(n: usize) -> Self {
        <Self as num_traits::NumCast>::from(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_deg<T: Scalar>(deg: T) -> T {
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    let mut d = deg % full;
    if d > half {
        d = d - full;
    } else if d <= -half {
        d = d + full;
    }
    d
}
