//! Scalar abstraction: the whole toolkit is generic over the floating type.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating scalar the numerics run on: `f32` or `f64`.
///
/// Coefficient tables, solver tolerances and physical parameters are all
/// expressed through this trait so that every construction can be
/// instantiated at either precision. The default tolerances throughout the
/// crate assume `f64`; at `f32` callers must supply their own.
pub trait Real: RealField + FromPrimitive + ToPrimitive + Copy {}

impl<T> Real for T where T: RealField + FromPrimitive + ToPrimitive + Copy {}

/// Shorthand for lifting an `f64` literal into the generic scalar.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert into the scalar type")
}

/// Factorial as a scalar (exact for the small arguments used here).
#[inline]
pub fn factorial<T: Real>(n: usize) -> T {
    let mut acc = 1.0_f64;
    for k in 2..=n {
        acc *= k as f64;
    }
    real(acc)
}

/// Binomial coefficient `C(n, k)` as a scalar.
#[inline]
pub fn binomial<T: Real>(n: usize, k: usize) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    real(acc.round())
}
