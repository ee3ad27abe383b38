use ndarray::LinalgScalar;
use num_traits::Float;

/// Floating-point element type for the network and attention math.
///
/// Training runs in `f32` (checkpoints store 32-bit blobs, so resume stays
/// bit-exact); the finite-difference gradient checks instantiate the same
/// code with `f64`.
pub trait Scalar:
    Float
    + LinalgScalar
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum<Self>
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
