//! Scalar abstraction shared by the oscillator, pattern, kinematics and
//! metrics layers. Everything numeric in those layers is written against
//! [`Real`] so it runs in `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle into `[0, 2π)`.
#[inline]
pub fn wrap_to_2pi<T: Real>(x: T) -> T {
    let two_pi = T::TAU();
    let y = x % two_pi;
    let y = if y < T::zero() { y + two_pi } else { y };
    // `y + 2π` can round up to exactly 2π for tiny negative inputs.
    if y >= two_pi {
        T::zero()
    } else {
        y
    }
}

/// Wraps an angle into `(-π, π]`.
#[inline]
pub fn wrap_to_pi<T: Real>(x: T) -> T {
    let y = wrap_to_2pi(x);
    if y > T::PI() {
        y - T::TAU()
    } else {
        y
    }
}

/// Smallest absolute angular distance between two angles, in `[0, π]`.
#[inline]
pub fn angle_distance<T: Real>(a: T, b: T) -> T {
    wrap_to_pi(a - b).abs()
}
