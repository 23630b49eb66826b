//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the embedding math is written against.
///
/// Implemented for `f32` and `f64`. Everything the toolkit ships uses `f64`;
/// `f32` exists for memory-bound experiments and is exercised in tests.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; exact for `f64`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any float scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float scalar converts to f64")
    }

    /// Number of significant decimal digits needed for a lossless text round-trip.
    const ROUND_TRIP_DIGITS: usize;
}

impl Scalar for f64 {
    const ROUND_TRIP_DIGITS: usize = 17;
}

impl Scalar for f32 {
    const ROUND_TRIP_DIGITS: usize = 9;
}

/// Formats `x` with enough significant digits to parse back to the same bits.
pub fn format_lossless<T: Scalar>(x: T) -> String {
    format!("{:.*e}", T::ROUND_TRIP_DIGITS - 1, x)
}
