use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the physics demos.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static {
    /// Converts a literal; every `f64` constant used here fits in `f32`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("float literal")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
