//! Floating-point abstraction shared by the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable by the network, samplers and dense linear algebra.
///
/// Implemented for `f32` and `f64`. Evaluation and every tolerance-bearing
/// test run in `f64`; `f32` is available for faster training.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Short type tag written into checkpoints.
    const NAME: &'static str;

    /// Branch-free `exp` that the compiler can vectorize, accurate to a few
    /// ulp. Inputs are clamped to the finite range, so large arguments
    /// saturate at the largest finite power of two instead of +∞.
    fn fast_exp(self) -> Self;
}

// Rounding by adding 1.5·2^m leaves round(x) in the low mantissa bits.
const ROUND_F64: f64 = 6_755_399_441_055_744.0;
const ROUND_F32: f32 = 12_582_912.0;

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn fast_exp(self) -> f32 {
        const LN2_HI: f32 = 0.693_145_75;
        const LN2_LO: f32 = 1.428_606_8e-6;
        let x = self.clamp(-87.0, 88.0);
        let shifted = x * std::f32::consts::LOG2_E + ROUND_F32;
        let k = shifted - ROUND_F32;
        let r = x - k * LN2_HI - k * LN2_LO;
        // Taylor series to r^7 on |r| ≤ ln2/2: truncation below 1e-8.
        let p = 1.0
            + r * (1.0
                + r * (0.5
                    + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0 + r * (1.0 / 5040.0)))))));
        let n = shifted.to_bits() as i32 - ROUND_F32.to_bits() as i32;
        p * f32::from_bits(((n + 127) as u32) << 23)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn fast_exp(self) -> f64 {
        const LN2_HI: f64 = 6.931_471_803_691_238e-1;
        const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
        let x = self.clamp(-708.0, 709.0);
        let shifted = x * std::f64::consts::LOG2_E + ROUND_F64;
        let k = shifted - ROUND_F64;
        let r = x - k * LN2_HI - k * LN2_LO;
        // Taylor series to r^13 on |r| ≤ ln2/2: truncation below 1e-17.
        let mut p = 1.0 / 6_227_020_800.0;
        for c in [
            1.0 / 479_001_600.0,
            1.0 / 39_916_800.0,
            1.0 / 3_628_800.0,
            1.0 / 362_880.0,
            1.0 / 40_320.0,
            1.0 / 5040.0,
            1.0 / 720.0,
            1.0 / 120.0,
            1.0 / 24.0,
            1.0 / 6.0,
            0.5,
            1.0,
            1.0,
        ] {
            p = p * r + c;
        }
        let n = shifted.to_bits() as i64 - ROUND_F64.to_bits() as i64;
        p * f64::from_bits(((n + 1023) as u64) << 52)
    }
}

/// Logistic sigmoid. For very negative `x`, `exp(−x)` saturates and the
/// quotient rounds to 0, so no branch is needed.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).fast_exp())
}

pub fn to_f64_vec<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|&x| x.as_f64()).collect()
}

pub fn from_f64_vec<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::of(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_matches_libm() {
        let mut worst = (0.0f64, 0.0f64);
        for i in -70_000..=70_000 {
            let x = i as f64 * 0.01;
            let e64 = (x.fast_exp() / x.exp() - 1.0).abs();
            let xf = x as f32;
            let e32 = (f64::from(xf.fast_exp()) / f64::from(xf).exp() - 1.0).abs();
            worst.0 = worst.0.max(e64);
            if xf.abs() < 87.0 {
                worst.1 = worst.1.max(e32);
            }
        }
        assert!(worst.0 < 1e-15, "f64 rel err {}", worst.0);
        assert!(worst.1 < 1e-6, "f32 rel err {}", worst.1);
        assert_eq!(0.0f64.fast_exp(), 1.0);
        assert!(1e4f64.fast_exp().is_finite() && (-1e4f64).fast_exp() >= 0.0);
    }

    #[test]
    fn sigmoid_saturates() {
        assert_eq!(sigmoid(1e3f64), 1.0);
        assert!(sigmoid(-1e3f64) < 1e-300);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
