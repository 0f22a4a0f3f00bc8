//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point element type of embeddings and scores: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Storage width in bytes, recorded in persisted index headers.
    const BYTES: u8;

    fn from_storage(v: f32) -> Self;

    fn to_storage(self) -> f32;

    /// Lossy conversion from an `f64` constant (thresholds, weights).
    fn lit(v: f64) -> Self;
}

impl Scalar for f32 {
    const BYTES: u8 = 4;

    #[inline]
    fn from_storage(v: f32) -> Self {
        v
    }

    #[inline]
    fn to_storage(self) -> f32 {
        self
    }

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const BYTES: u8 = 8;

    #[inline]
    fn from_storage(v: f32) -> Self {
        f64::from(v)
    }

    #[inline]
    fn to_storage(self) -> f32 {
        self as f32
    }

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
}
