//! Baseline controllers the framework is compared against.
//!
//! Both baselines are deliberately naive: the PID has hard output clamping
//! and **no anti-windup** (its integrator accumulates raw error even while
//! the output is saturated, reproducing the classic windup failure), and
//! the continuous-stimulation policy fires on every tick the heading error
//! exceeds a threshold, ignoring habituation entirely.

use serde::{Deserialize, Serialize};

use crate::plants::Stimulus;
use crate::types::{ControlLimits, ControlVector};

/// Scalar PID gains applied per error dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 2.0,
            ki: 0.8,
            kd: 0.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.kp >= 0.0 && self.ki >= 0.0 && self.kd >= 0.0) {
            return Err(crate::Error::Config(format!(
                "PID gains must be ≥ 0, got kp={}, ki={}, kd={}",
                self.kp, self.ki, self.kd
            )));
        }
        Ok(())
    }
}

/// Integrator and derivative memory of the PID.
#[derive(Clone, Debug, PartialEq)]
pub struct PidState {
    /// Accumulated raw error (∫e dt), with no windup protection.
    pub integral: Vec<f64>,
    /// Error at the previous tick, for the derivative term.
    pub previous_error: Option<Vec<f64>>,
}

impl PidState {
    pub fn new(dim: usize) -> Self {
        PidState {
            integral: vec![0.0; dim],
            previous_error: None,
        }
    }
}

/// One PID tick: returns the clamped output and the advanced state.
///
/// The integrator accumulates the raw error unconditionally — saturation
/// does not stop it — so a sustained error under clamping grows the
/// integral linearly (the windup signature this baseline exists to show).
pub fn pid_step(
    error: &[f64],
    gains: &PidGains,
    state: &PidState,
    limits: &ControlLimits,
    dt: f64,
) -> (ControlVector, PidState) {
    assert_eq!(
        error.len(),
        state.integral.len(),
        "PID error dimension changed mid-run"
    );
    assert_eq!(
        error.len(),
        limits.dim(),
        "PID output dimension must match the control limits"
    );
    let mut next = state.clone();
    let mut raw = vec![0.0; error.len()];
    for (i, &e) in error.iter().enumerate() {
        next.integral[i] += e * dt;
        let derivative = match &state.previous_error {
            Some(prev) => (e - prev[i]) / dt,
            None => 0.0,
        };
        raw[i] = gains.kp * e + gains.ki * next.integral[i] + gains.kd * derivative;
    }
    next.previous_error = Some(error.to_vec());
    (ControlVector::new(raw, limits.clone()), next)
}

/// Continuous-stimulation policy: stimulate toward reducing the heading
/// error on every tick it exceeds the threshold. A positive error means
/// the heading must increase, which a Left stimulus provides.
pub fn continuous_stimulation_step(heading_error: f64, threshold: f64) -> Stimulus {
    if heading_error > threshold {
        Stimulus::Left
    } else if heading_error < -threshold {
        Stimulus::Right
    } else {
        Stimulus::None
    }
}
