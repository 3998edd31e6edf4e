//! Fixed-step ODE integration.
//!
//! One classical RK4 kernel serves both the scalar API used by tests and
//! plants and the batched model rollouts in the planner. The elementwise
//! stage combinations live in dedicated non-inlined helpers so every call
//! site shares one compiled instance; together with a single forward-pass
//! routine in the model this makes a candidate's batched rollout
//! bit-identical to the same rollout recomputed alone.

use crate::error::{Error, Result};
use crate::types::{ControlVector, StateVector};

/// `out[i] = x[i] + c * k[i]`.
///
/// Never inlined: both the scalar RK4 kernel and the batched rollout must
/// round identically, which one shared machine-code instance guarantees.
#[inline(never)]
pub(crate) fn add_scaled(x: &[f64], c: f64, k: &[f64], out: &mut [f64]) {
    for ((o, &xv), &kv) in out.iter_mut().zip(x).zip(k) {
        *o = xv + c * kv;
    }
}

/// Classical RK4 combination `out = x + dt/6 · (k1 + 2k2 + 2k3 + k4)`.
/// Not inlined for the same reason as [`add_scaled`].
#[inline(never)]
pub(crate) fn rk4_combine(
    x: &[f64],
    k1: &[f64],
    k2: &[f64],
    k3: &[f64],
    k4: &[f64],
    dt: f64,
    out: &mut [f64],
) {
    let c = dt / 6.0;
    for i in 0..out.len() {
        out[i] = x[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Reusable stage buffers for repeated RK4 steps of one dimension.
pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    xt: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(dim: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            xt: vec![0.0; dim],
        }
    }
}

fn check_stage(k: &[f64], stage: usize) -> Result<()> {
    if k.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration { stage })
    }
}

/// One classical 4th-order Runge-Kutta step on raw slices.
///
/// `field(x, u, dx)` writes the derivative of `x` under input `u` into
/// `dx`. The input is held constant across the four stages (zero-order
/// hold). Each stage output is checked for finiteness and reported with
/// its stage index on failure.
pub fn rk4_step_raw<F>(
    mut field: F,
    x: &[f64],
    u: &[f64],
    dt: f64,
    s: &mut Rk4Scratch,
    out: &mut [f64],
) -> Result<()>
where
    F: FnMut(&[f64], &[f64], &mut [f64]),
{
    debug_assert!(dt > 0.0);
    field(x, u, &mut s.k1);
    check_stage(&s.k1, 1)?;
    add_scaled(x, dt * 0.5, &s.k1, &mut s.xt);
    field(&s.xt, u, &mut s.k2);
    check_stage(&s.k2, 2)?;
    add_scaled(x, dt * 0.5, &s.k2, &mut s.xt);
    field(&s.xt, u, &mut s.k3);
    check_stage(&s.k3, 3)?;
    add_scaled(x, dt, &s.k3, &mut s.xt);
    field(&s.xt, u, &mut s.k4);
    check_stage(&s.k4, 4)?;
    rk4_combine(x, &s.k1, &s.k2, &s.k3, &s.k4, dt, out);
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration { stage: 4 })
    }
}

/// One RK4 step on typed state and control.
pub fn rk4_step<F>(field: F, x: &StateVector, u: &ControlVector, dt: f64) -> Result<StateVector>
where
    F: FnMut(&[f64], &[f64], &mut [f64]),
{
    let mut scratch = Rk4Scratch::new(x.dim());
    let mut out = vec![0.0; x.dim()];
    rk4_step_raw(field, x.as_slice(), u.as_slice(), dt, &mut scratch, &mut out)?;
    Ok(StateVector::new(out))
}

/// Explicit Euler update `value + rate · derivative · dt`, the discretization
/// used for the filter's adaptive-estimate law.
pub fn euler_step(value: &[f64], derivative: &[f64], rate: f64, dt: f64) -> Vec<f64> {
    assert_eq!(value.len(), derivative.len(), "euler dim mismatch");
    assert!(rate >= 0.0, "negative rate");
    assert!(dt > 0.0, "non-positive dt");
    value
        .iter()
        .zip(derivative)
        .map(|(&v, &d)| v + rate * d * dt)
        .collect()
}
