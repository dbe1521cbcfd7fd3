//! Floating-point scalar abstraction.
//!
//! All numerics in this crate are generic over [`Scalar`] so the same code
//! runs in `f32` or `f64`. The crate root exports `f64` aliases, which is
//! what the CLI and the reference tolerances assume.

use num_traits::{Float, FromPrimitive};

/// Scalar type for flows, phases, reactances, and capacities.
pub trait Scalar:
    Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

/// Shorthand for pulling an `f64` literal into the working scalar type.
#[inline]
pub fn cast<S: Scalar>(value: f64) -> S {
    S::from_f64(value).expect("literal representable in scalar type")
}

/// Relative tolerance used by the flow solver and validation checks.
pub fn default_tolerance<S: Scalar>() -> S {
    cast(1e-9)
}
