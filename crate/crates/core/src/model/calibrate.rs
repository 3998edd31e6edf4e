//! Post-training error-bound calibration on held-out data.
//!
//! For every transition in the validation split the model predicts the
//! next state with one integrator step from the recorded state and
//! control; the residual is the norm of the state-prediction error
//! divided by the step length, i.e. an empirical bound on the derivative
//! mismatch. The published bound is the worst residual inflated by a
//! fixed safety factor, and it ships with the axis-aligned box that the
//! validation data actually covered so downstream users can detect
//! extrapolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::net::ModelParams;
use crate::model::{rollout_rows, RolloutScratch};
use crate::types::Trajectory;

/// Multiplier applied to the worst observed validation residual.
pub const CALIBRATION_SAFETY_FACTOR: f64 = 1.25;

/// Axis-aligned bounding box of the states and controls seen during
/// calibration. The error bound is only evidence-backed inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageBox {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
}

impl CoverageBox {
    fn empty(xdim: usize, udim: usize) -> Self {
        CoverageBox {
            x_lo: vec![f64::INFINITY; xdim],
            x_hi: vec![f64::NEG_INFINITY; xdim],
            u_lo: vec![f64::INFINITY; udim],
            u_hi: vec![f64::NEG_INFINITY; udim],
        }
    }

    fn include_state(&mut self, x: &[f64]) {
        for (d, &v) in x.iter().enumerate() {
            self.x_lo[d] = self.x_lo[d].min(v);
            self.x_hi[d] = self.x_hi[d].max(v);
        }
    }

    fn include_control(&mut self, u: &[f64]) {
        for (d, &v) in u.iter().enumerate() {
            self.u_lo[d] = self.u_lo[d].min(v);
            self.u_hi[d] = self.u_hi[d].max(v);
        }
    }

    /// Whether a state lies inside the covered box. Used per tick to warn
    /// when the controller leaves the region the bound was measured on.
    pub fn contains_state(&self, x: &[f64]) -> bool {
        x.len() == self.x_lo.len()
            && x.iter()
                .enumerate()
                .all(|(d, &v)| v >= self.x_lo[d] && v <= self.x_hi[d])
    }
}

/// Calibrated model-error bound: a scalar derivative-error radius plus
/// the data region it was measured on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBound {
    /// Safety-inflated maximum validation residual (per unit time).
    pub epsilon: f64,
    pub coverage: CoverageBox,
}

/// Measures one-step prediction residuals on the validation split and
/// returns the inflated worst case together with the coverage box.
///
/// The residual of a transition `(x_k, u_k) -> x_{k+1}` is
/// `norm(predict(x_k, u_k) - x_{k+1}) / dt` where `predict` is a single
/// integrator step of the model. A model that reproduces its validation
/// data exactly therefore calibrates to zero.
pub fn calibrate_error_bound(
    params: &ModelParams,
    validation: &[Trajectory],
    dt: f64,
) -> Result<ErrorBound> {
    let xdim = params.arch().xdim;
    let udim = params.arch().udim;
    if validation.is_empty() {
        return Err(Error::Config("empty validation split".into()));
    }
    let mut coverage = CoverageBox::empty(xdim, udim);
    let mut worst = 0.0f64;

    let mut scratch = RolloutScratch::new();
    let mut x0s = Vec::new();
    let mut controls = Vec::new();
    let mut states = Vec::new();
    let mut faults = Vec::new();

    for traj in validation {
        if traj.states()[0].dim() != xdim {
            return Err(Error::ModelShape(format!(
                "validation state dim {} does not match architecture {}",
                traj.states()[0].dim(),
                xdim
            )));
        }
        if (traj.dt() - dt).abs() > 1e-12 {
            return Err(Error::Config("validation dt does not match model dt".into()));
        }
        for x in traj.states() {
            coverage.include_state(x.as_slice());
        }
        for u in traj.controls() {
            coverage.include_control(u.as_slice());
        }

        // One batched single-step prediction per transition.
        for chunk_start in (0..traj.len()).step_by(256) {
            let rows = (traj.len() - chunk_start).min(256);
            x0s.resize(rows * xdim, 0.0);
            controls.resize(rows * udim, 0.0);
            states.resize(rows * 2 * xdim, 0.0);
            faults.resize(rows, 0u8);
            for r in 0..rows {
                let k = chunk_start + r;
                x0s[r * xdim..(r + 1) * xdim].copy_from_slice(traj.states()[k].as_slice());
                controls[r * udim..(r + 1) * udim].copy_from_slice(traj.controls()[k].as_slice());
            }
            rollout_rows(
                params,
                &x0s,
                &controls,
                rows,
                1,
                dt,
                &mut scratch,
                &mut states,
                None,
                &mut faults,
            );
            for r in 0..rows {
                if faults[r] != 0 {
                    return Err(Error::Integration {
                        stage: faults[r] as usize,
                    });
                }
                let k = chunk_start + r;
                let obs = traj.states()[k + 1].as_slice();
                let mut sq = 0.0;
                for d in 0..xdim {
                    let e = states[r * 2 * xdim + xdim + d] - obs[d];
                    sq += e * e;
                }
                worst = worst.max(sq.sqrt() / dt);
            }
        }
    }

    Ok(ErrorBound {
        epsilon: CALIBRATION_SAFETY_FACTOR * worst,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::net::Architecture;
    use crate::model::rollout;
    use crate::types::{ControlLimits, ControlVector, StateVector};

    fn lim(udim: usize) -> ControlLimits {
        ControlLimits::symmetric(udim, 1.0)
    }

    /// A self-consistent validation set: trajectories generated by the
    /// model itself calibrate to exactly zero.
    #[test]
    fn perfect_model_calibrates_to_zero() {
        let mut p = ModelParams::seeded_init(Architecture::linear(2, 1), 3);
        // Damped rotation with forcing, hand-set.
        let m = p.raw_mut();
        // Layout: weights [in][out] then biases. in = (x0, x1, u), out dim 2.
        m[0] = -0.3;
        m[1] = 1.0;
        m[2] = -1.0;
        m[3] = -0.3;
        m[4] = 0.5;
        m[5] = 0.2;
        let dt = 0.05;
        let controls: Vec<ControlVector> = (0..40)
            .map(|i| ControlVector::new(vec![(0.1 * i as f64).sin() * 0.8], lim(1)))
            .collect();
        let traj = rollout(&p, &StateVector::new(vec![0.4, -0.2]), &controls, dt).unwrap();
        let bound = calibrate_error_bound(&p, &[traj], dt).unwrap();
        assert_eq!(bound.epsilon, 0.0);
    }

    /// With a zero true field (constant data) and a model that is a pure
    /// constant bias, every stage derivative equals the bias, so the raw
    /// residual equals its norm exactly and the published bound is the
    /// safety factor times that.
    #[test]
    fn constant_bias_calibrates_to_scaled_bias_norm() {
        let mut p = ModelParams::zeros(Architecture::linear(2, 1));
        let (b0, b1) = (0.3, -0.4);
        let n = p.raw().len();
        p.raw_mut()[n - 2] = b0;
        p.raw_mut()[n - 1] = b1;
        let dt = 0.05;
        let states = vec![StateVector::new(vec![1.0, 2.0]); 11];
        let controls = vec![ControlVector::zeros(lim(1)); 10];
        let traj = Trajectory::new(states, controls, dt, 0.0).unwrap();
        let bound = calibrate_error_bound(&p, &[traj], dt).unwrap();
        let bias_norm = (b0 * b0 + b1 * b1).sqrt();
        assert!(
            (bound.epsilon - CALIBRATION_SAFETY_FACTOR * bias_norm).abs() < 1e-12,
            "epsilon {} vs {}",
            bound.epsilon,
            CALIBRATION_SAFETY_FACTOR * bias_norm
        );
    }

    #[test]
    fn coverage_box_tracks_data_extent() {
        let p = ModelParams::zeros(Architecture::linear(1, 1));
        let states = vec![
            StateVector::new(vec![-1.0]),
            StateVector::new(vec![2.0]),
            StateVector::new(vec![0.5]),
        ];
        let controls = vec![
            ControlVector::new(vec![0.25], lim(1)),
            ControlVector::new(vec![-0.75], lim(1)),
        ];
        let traj = Trajectory::new(states, controls, 0.1, 0.0).unwrap();
        let bound = calibrate_error_bound(&p, &[traj], 0.1).unwrap();
        assert_eq!(bound.coverage.x_lo, vec![-1.0]);
        assert_eq!(bound.coverage.x_hi, vec![2.0]);
        assert_eq!(bound.coverage.u_lo, vec![-0.75]);
        assert_eq!(bound.coverage.u_hi, vec![0.25]);
        assert!(bound.coverage.contains_state(&[0.0]));
        assert!(!bound.coverage.contains_state(&[2.1]));
        assert!(!bound.coverage.contains_state(&[0.0, 0.0]));
    }

    #[test]
    fn empty_validation_split_is_an_error() {
        let p = ModelParams::zeros(Architecture::linear(1, 1));
        assert!(matches!(
            calibrate_error_bound(&p, &[], 0.05),
            Err(Error::Config(_))
        ));
    }

    /// Residual dominance: after calibration, every validation residual
    /// is at most the published epsilon (strictly below, thanks to the
    /// safety factor, unless everything is exactly zero).
    #[test]
    fn published_bound_dominates_every_residual() {
        let p = ModelParams::seeded_init(Architecture::with_hidden(2, 1, vec![8]), 11);
        let dt = 0.05;
        // Data from a different (zero) system so residuals are nonzero.
        let states = vec![StateVector::new(vec![0.2, -0.1]); 21];
        let controls: Vec<ControlVector> = (0..20)
            .map(|i| ControlVector::new(vec![if i % 2 == 0 { 0.5 } else { -0.5 }], lim(1)))
            .collect();
        let traj = Trajectory::new(states.clone(), controls.clone(), dt, 0.0).unwrap();
        let bound = calibrate_error_bound(&p, &[traj], dt).unwrap();
        assert!(bound.epsilon > 0.0);
        // Recompute each residual by brute force with single rollouts.
        for k in 0..20 {
            let pred = rollout(&p, &states[k], &controls[k..k + 1], dt).unwrap();
            let e0 = pred.states()[1][0] - states[k + 1][0];
            let e1 = pred.states()[1][1] - states[k + 1][1];
            let residual = (e0 * e0 + e1 * e1).sqrt() / dt;
            assert!(residual <= bound.epsilon);
        }
    }
}
