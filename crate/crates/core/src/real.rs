use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Scalar type the numerics are generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; exact for `f64`, rounded for `f32`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal out of range")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::lit(x)
}

#[inline]
pub(crate) fn cr<T: Real>(x: T) -> C<T> {
    Complex::new(x, T::zero())
}

/// Complex `exp(z) - 1` without cancellation for small `|z|`.
pub fn cexpm1<T: Real>(z: C<T>) -> C<T> {
    let (x, y) = (z.re, z.im);
    let half = lit::<T>(0.5);
    let s = (y * half).sin();
    let re = x.exp_m1() * y.cos() - lit::<T>(2.0) * s * s;
    let im = x.exp() * y.sin();
    Complex::new(re, im)
}

/// `sinh(z)/z`, entire; series near zero.
pub fn csinhc<T: Real>(z: C<T>) -> C<T> {
    if z.norm() < lit(0.5) {
        let z2 = z * z;
        let mut term = cr(T::one());
        let mut sum = term;
        for m in 1..30 {
            let d = lit::<T>(((2 * m) * (2 * m + 1)) as f64);
            term = term * z2 / d;
            sum += term;
            if term.norm() <= T::epsilon() * sum.norm() {
                break;
            }
        }
        sum
    } else {
        z.sinh() / z
    }
}
