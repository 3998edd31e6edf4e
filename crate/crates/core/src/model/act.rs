//! Network activation function.
//!
//! The hidden-layer nonlinearity is tanh evaluated through a clamped odd
//! rational approximation (degree 13 over degree 6 in the input), accurate
//! to a few 1e-8 absolute against the libm function. Two properties matter
//! more here than the last digits of tanh itself:
//!
//! - it costs a handful of multiplies, which keeps batched candidate
//!   rollouts inside the real-time budget on one core, and
//! - [`dtanh`] is the exact analytic derivative of [`tanh`] as computed,
//!   so training gradients agree with finite differences of the actual
//!   forward pass to machine precision, not merely to the accuracy of the
//!   approximation.

/// Saturation point: the rational part reaches ±1 here, so inputs beyond
/// it are clamped and the derivative is treated as zero (true tanh slope
/// at this point is below 3e-7).
const CLAMP: f64 = 7.905_311_107_635_498;

const A1: f64 = 4.893_524_558_917_86e-3;
const A3: f64 = 6.372_619_288_754_36e-4;
const A5: f64 = 1.485_722_357_179_79e-5;
const A7: f64 = 5.122_297_090_371_14e-8;
const A9: f64 = -8.604_671_522_137_35e-11;
const A11: f64 = 2.000_187_904_824_77e-13;
const A13: f64 = -2.760_768_477_423_55e-16;
const B0: f64 = 4.893_525_185_543_85e-3;
const B2: f64 = 2.268_434_632_439_00e-3;
const B4: f64 = 1.185_347_056_866_54e-4;
const B6: f64 = 1.198_258_394_667_02e-6;

#[inline(always)]
fn numerator(s: f64) -> f64 {
    A1 + s * (A3 + s * (A5 + s * (A7 + s * (A9 + s * (A11 + s * A13)))))
}

#[inline(always)]
fn numerator_ds(s: f64) -> f64 {
    A3 + s * (2.0 * A5 + s * (3.0 * A7 + s * (4.0 * A9 + s * (5.0 * A11 + s * (6.0 * A13)))))
}

#[inline(always)]
fn denominator(s: f64) -> f64 {
    B0 + s * (B2 + s * (B4 + s * B6))
}

#[inline(always)]
fn denominator_ds(s: f64) -> f64 {
    B2 + s * (2.0 * B4 + s * (3.0 * B6))
}

/// Hyperbolic tangent (rational approximation, clamped past saturation).
#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let x = x.clamp(-CLAMP, CLAMP);
    let s = x * x;
    x * numerator(s) / denominator(s)
}

/// Exact derivative of [`tanh`] as implemented (quotient rule on the
/// rational form; zero in the clamped region).
#[inline(always)]
pub fn dtanh(x: f64) -> f64 {
    if x.abs() >= CLAMP {
        return 0.0;
    }
    let s = x * x;
    let n = numerator(s);
    let d = denominator(s);
    ((n + 2.0 * s * numerator_ds(s)) * d - 2.0 * s * n * denominator_ds(s)) / (d * d)
}
