//! Scalar abstraction shared by every numeric model in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar: `f32` or `f64`.
///
/// All voltages, currents, capacitances, energies and real-valued attention
/// scores are carried in this type. Exactness claims (affine residuals at
/// `1e-12`, conservation of accounting) only hold for `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; used for literal constants.
    fn of(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("f64 is representable in every Scalar")
    }

    fn of_usize(value: usize) -> Self {
        <Self as NumCast>::from(value).expect("usize is representable in every Scalar")
    }

    fn of_i64(value: i64) -> Self {
        <Self as NumCast>::from(value).expect("i64 is representable in every Scalar")
    }

    /// Relative resolution below which two analog quantities count as equal:
    /// `1e-9`, or 64 ulps when the type is coarser than that.
    fn resolution() -> Self {
        Self::of(1e-9).max(Self::epsilon() * Self::of(64.0))
    }

    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
