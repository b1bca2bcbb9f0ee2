//! Scalar abstractions shared by the numeric modules.
//!
//! Graph and Laplacian code only needs field arithmetic, so it is written
//! against [`Weight`] and works for exact rationals as well as floats.
//! Everything that takes square roots, angles or eigenvalues needs [`Real`].

use std::fmt::Debug;

/// Field-like scalar used for edge weights and Laplacian entries.
pub trait Weight: num_traits::Num + Copy + PartialOrd + Debug + 'static {}

impl<T> Weight for T where T: num_traits::Num + Copy + PartialOrd + Debug + 'static {}

/// Floating point scalar (`f32` or `f64`).
pub trait Real: nalgebra::RealField + Weight {}

impl<T> Real for T where T: nalgebra::RealField + Weight {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}
