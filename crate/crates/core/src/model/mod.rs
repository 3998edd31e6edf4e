//! Learned derivative-field model.
//!
//! A fully connected network maps the concatenated state and control to
//! the state derivative. Trajectories are predicted by integrating the
//! network with the same fixed-step RK4 kernel the rest of the crate uses.
//! Training differentiates through the unrolled integrator (discretize
//! then optimize), and calibration turns held-out residuals into a single
//! worst-case error bound the safety filter can consume.

mod act;
mod calibrate;
mod checkpoint;
mod net;
mod train;

pub use calibrate::{calibrate_error_bound, CoverageBox, ErrorBound, CALIBRATION_SAFETY_FACTOR};
pub use checkpoint::TrainedModel;
pub use net::{Activation, Architecture, BackwardScratch, EvalTape, ModelParams};
pub use train::{
    evaluate_loss, loss_and_gradient, train, train_with_history, Dataset, TrainHyper,
};

pub(crate) use net::forward_tape;

use crate::error::{Error, Result};
use crate::integrate::{add_scaled, rk4_combine};
use crate::types::{ControlVector, StateVector, Trajectory};

/// Reusable buffers for batched model rollouts.
pub struct RolloutScratch {
    tape: EvalTape,
    inp: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    xs: Vec<f64>,
    xt: Vec<f64>,
}

impl Default for RolloutScratch {
    fn default() -> Self {
        RolloutScratch {
            tape: EvalTape::new(),
            inp: Vec::new(),
            k1: Vec::new(),
            k2: Vec::new(),
            k3: Vec::new(),
            k4: Vec::new(),
            xs: Vec::new(),
            xt: Vec::new(),
        }
    }
}

impl RolloutScratch {
    pub fn new() -> Self {
        RolloutScratch::default()
    }

    fn ensure(&mut self, rows: usize, xdim: usize, indim: usize) {
        self.inp.resize(rows * indim, 0.0);
        for buf in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.xs, &mut self.xt] {
            buf.resize(rows * xdim, 0.0);
        }
    }
}

fn assemble_inputs(
    inp: &mut [f64],
    xs: &[f64],
    controls: &[f64],
    rows: usize,
    xdim: usize,
    udim: usize,
    horizon: usize,
    step: usize,
) {
    let indim = xdim + udim;
    for r in 0..rows {
        inp[r * indim..r * indim + xdim].copy_from_slice(&xs[r * xdim..(r + 1) * xdim]);
        let u = &controls[(r * horizon + step) * udim..(r * horizon + step + 1) * udim];
        inp[r * indim + xdim..(r + 1) * indim].copy_from_slice(u);
    }
}

fn mark_faults(k: &[f64], rows: usize, xdim: usize, stage: u8, faults: &mut [u8]) {
    for r in 0..rows {
        if faults[r] == 0 && !k[r * xdim..(r + 1) * xdim].iter().all(|v| v.is_finite()) {
            faults[r] = stage;
        }
    }
}

/// Integrates `rows` independent candidates in lockstep: each row has its
/// own start state and control sequence, every RK4 stage evaluates the
/// network once over the whole batch.
///
/// `out_states` receives the predicted states candidate-major
/// (`rows × (horizon+1) × xdim`, the start state included). If given,
/// `first_deriv` receives each row's derivative at its start state under
/// its first control — the representation the safety filter compares
/// candidates by. Rows whose integration produces a non-finite stage get
/// the failing stage recorded in `faults` (0 means clean); their remaining
/// outputs are unspecified.
///
/// Per-row arithmetic is identical whether a row is integrated alone or in
/// a batch, so callers may partition rows freely (e.g. across threads)
/// without changing results.
pub(crate) fn rollout_rows(
    p: &ModelParams,
    x0s: &[f64],
    controls: &[f64],
    rows: usize,
    horizon: usize,
    dt: f64,
    scratch: &mut RolloutScratch,
    out_states: &mut [f64],
    mut first_deriv: Option<&mut [f64]>,
    faults: &mut [u8],
) {
    let xdim = p.arch().xdim;
    let udim = p.arch().udim;
    let indim = xdim + udim;
    debug_assert_eq!(x0s.len(), rows * xdim);
    debug_assert_eq!(controls.len(), rows * horizon * udim);
    debug_assert_eq!(out_states.len(), rows * (horizon + 1) * xdim);
    debug_assert_eq!(faults.len(), rows);

    scratch.ensure(rows, xdim, indim);
    scratch.xs[..rows * xdim].copy_from_slice(x0s);
    faults.fill(0);
    for r in 0..rows {
        out_states[r * (horizon + 1) * xdim..r * (horizon + 1) * xdim + xdim]
            .copy_from_slice(&scratch.xs[r * xdim..(r + 1) * xdim]);
    }

    for step in 0..horizon {
        let half = dt * 0.5;
        // Stage 1 at the step state.
        assemble_inputs(&mut scratch.inp, &scratch.xs, controls, rows, xdim, udim, horizon, step);
        forward_tape(p, &scratch.inp, rows, &mut scratch.tape);
        scratch.k1[..rows * xdim].copy_from_slice(scratch.tape.output());
        mark_faults(&scratch.k1, rows, xdim, 1, faults);
        if step == 0 {
            if let Some(fd) = first_deriv.as_deref_mut() {
                fd.copy_from_slice(&scratch.k1[..rows * xdim]);
            }
        }
        // Stage 2 at x + dt/2 k1.
        for r in 0..rows {
            add_scaled(
                &scratch.xs[r * xdim..(r + 1) * xdim],
                half,
                &scratch.k1[r * xdim..(r + 1) * xdim],
                &mut scratch.xt[r * xdim..(r + 1) * xdim],
            );
        }
        assemble_inputs(&mut scratch.inp, &scratch.xt, controls, rows, xdim, udim, horizon, step);
        forward_tape(p, &scratch.inp, rows, &mut scratch.tape);
        scratch.k2[..rows * xdim].copy_from_slice(scratch.tape.output());
        mark_faults(&scratch.k2, rows, xdim, 2, faults);
        // Stage 3 at x + dt/2 k2.
        for r in 0..rows {
            add_scaled(
                &scratch.xs[r * xdim..(r + 1) * xdim],
                half,
                &scratch.k2[r * xdim..(r + 1) * xdim],
                &mut scratch.xt[r * xdim..(r + 1) * xdim],
            );
        }
        assemble_inputs(&mut scratch.inp, &scratch.xt, controls, rows, xdim, udim, horizon, step);
        forward_tape(p, &scratch.inp, rows, &mut scratch.tape);
        scratch.k3[..rows * xdim].copy_from_slice(scratch.tape.output());
        mark_faults(&scratch.k3, rows, xdim, 3, faults);
        // Stage 4 at x + dt k3.
        for r in 0..rows {
            add_scaled(
                &scratch.xs[r * xdim..(r + 1) * xdim],
                dt,
                &scratch.k3[r * xdim..(r + 1) * xdim],
                &mut scratch.xt[r * xdim..(r + 1) * xdim],
            );
        }
        assemble_inputs(&mut scratch.inp, &scratch.xt, controls, rows, xdim, udim, horizon, step);
        forward_tape(p, &scratch.inp, rows, &mut scratch.tape);
        scratch.k4[..rows * xdim].copy_from_slice(scratch.tape.output());
        mark_faults(&scratch.k4, rows, xdim, 4, faults);
        // Combine and store.
        for r in 0..rows {
            let span = r * xdim..(r + 1) * xdim;
            rk4_combine(
                &scratch.xs[span.clone()],
                &scratch.k1[span.clone()],
                &scratch.k2[span.clone()],
                &scratch.k3[span.clone()],
                &scratch.k4[span.clone()],
                dt,
                &mut scratch.xt[span.clone()],
            );
            scratch.xs[span].copy_from_slice(&scratch.xt[r * xdim..(r + 1) * xdim]);
        }
        mark_faults(&scratch.xs, rows, xdim, 4, faults);
        for r in 0..rows {
            let dst = r * (horizon + 1) * xdim + (step + 1) * xdim;
            out_states[dst..dst + xdim].copy_from_slice(&scratch.xs[r * xdim..(r + 1) * xdim]);
        }
    }
}

fn check_dims(p: &ModelParams, xdim: usize, udim: usize) -> Result<()> {
    if p.arch().xdim != xdim || p.arch().udim != udim {
        return Err(Error::ModelShape(format!(
            "model expects state {} / control {}, got state {} / control {}",
            p.arch().xdim,
            p.arch().udim,
            xdim,
            udim
        )));
    }
    Ok(())
}

/// Network forward pass: predicted state derivative at `(x, u)`.
pub fn predict_derivative(p: &ModelParams, x: &StateVector, u: &ControlVector) -> Result<Vec<f64>> {
    check_dims(p, x.dim(), u.dim())?;
    let mut inp = Vec::with_capacity(x.dim() + u.dim());
    inp.extend_from_slice(x.as_slice());
    inp.extend_from_slice(u.as_slice());
    let mut tape = EvalTape::new();
    forward_tape(p, &inp, 1, &mut tape);
    Ok(tape.output().to_vec())
}

/// Predicts the trajectory from `x0` under the control sequence: one RK4
/// step of the learned field per control. The returned trajectory starts
/// at time zero.
pub fn rollout(
    p: &ModelParams,
    x0: &StateVector,
    controls: &[ControlVector],
    dt: f64,
) -> Result<Trajectory> {
    if controls.is_empty() {
        return Err(Error::Config("rollout needs at least one control".into()));
    }
    check_dims(p, x0.dim(), controls[0].dim())?;
    let xdim = x0.dim();
    let horizon = controls.len();
    let flat: Vec<f64> = controls.iter().flat_map(|u| u.as_slice().iter().copied()).collect();
    let mut scratch = RolloutScratch::new();
    let mut out = vec![0.0; (horizon + 1) * xdim];
    let mut faults = [0u8];
    rollout_rows(
        p,
        x0.as_slice(),
        &flat,
        1,
        horizon,
        dt,
        &mut scratch,
        &mut out,
        None,
        &mut faults,
    );
    if faults[0] != 0 {
        return Err(Error::Integration {
            stage: faults[0] as usize,
        });
    }
    let states = out
        .chunks_exact(xdim)
        .map(|c| StateVector::new(c.to_vec()))
        .collect();
    Trajectory::new(states, controls.to_vec(), dt, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::rk4_step;
    use crate::types::ControlLimits;

    fn lim(dim: usize) -> ControlLimits {
        ControlLimits::symmetric(dim, 1.0)
    }

    #[test]
    fn zero_weights_predict_zero_and_hold_state() {
        let p = ModelParams::zeros(Architecture::mlp(3, 2));
        let x = StateVector::new(vec![0.5, -0.2, 1.0]);
        let u = ControlVector::new(vec![0.3, 0.3], lim(2));
        assert_eq!(predict_derivative(&p, &x, &u).unwrap(), vec![0.0; 3]);
        let traj = rollout(&p, &x, &vec![u; 5], 0.1).unwrap();
        for s in traj.states() {
            assert_eq!(s, &x);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = ModelParams::zeros(Architecture::mlp(3, 2));
        let x = StateVector::zeros(4);
        let u = ControlVector::zeros(lim(2));
        assert!(matches!(
            predict_derivative(&p, &x, &u),
            Err(Error::ModelShape(_))
        ));
    }

    /// A linear model hand-set to dx/dt = -x must integrate to the analytic
    /// exponential within RK4 tolerance.
    #[test]
    fn hand_set_decay_model_matches_analytic() {
        let arch = Architecture::linear(1, 1);
        let mut p = ModelParams::zeros(arch);
        // Wt layout [in][out]: in = (x, u), out = dx. dx/dt = -1 * x + 0 * u.
        p.raw_mut()[0] = -1.0;
        let x0 = StateVector::new(vec![1.0]);
        let controls = vec![ControlVector::zeros(lim(1)); 100];
        let traj = rollout(&p, &x0, &controls, 0.01).unwrap();
        let end = traj.states().last().unwrap()[0];
        assert!((end - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn single_step_rollout_equals_rk4_step() {
        let p = ModelParams::seeded_init(Architecture::with_hidden(2, 1, vec![8]), 5);
        let x0 = StateVector::new(vec![0.4, -0.3]);
        let u = ControlVector::new(vec![0.5], lim(1));
        let traj = rollout(&p, &x0, &[u.clone()], 0.05).unwrap();
        let pc = p.clone();
        let direct = rk4_step(
            move |x, uu, dx| {
                let mut inp = x.to_vec();
                inp.extend_from_slice(uu);
                let mut tape = EvalTape::new();
                forward_tape(&pc, &inp, 1, &mut tape);
                dx.copy_from_slice(tape.output());
            },
            &x0,
            &u,
            0.05,
        )
        .unwrap();
        assert_eq!(traj.states()[1], direct);
    }

    /// Prefixes of a long rollout equal the shorter rollout: integration is
    /// a step-by-step composition.
    #[test]
    fn rollout_prefix_consistency() {
        let p = ModelParams::seeded_init(Architecture::with_hidden(3, 2, vec![12]), 9);
        let x0 = StateVector::new(vec![0.1, 0.2, -0.4]);
        let controls: Vec<ControlVector> = (0..6)
            .map(|i| ControlVector::new(vec![0.1 * i as f64, -0.05 * i as f64], lim(2)))
            .collect();
        let long = rollout(&p, &x0, &controls, 0.05).unwrap();
        for k in 1..=5 {
            let short = rollout(&p, &x0, &controls[..k], 0.05).unwrap();
            assert_eq!(&long.states()[..=k], short.states());
        }
    }

    /// A batch of candidates rolled out in lockstep must equal each
    /// candidate rolled out alone, bit for bit.
    #[test]
    fn batched_rollout_matches_individual() {
        let p = ModelParams::seeded_init(Architecture::with_hidden(2, 1, vec![16, 16]), 11);
        let rows = 7;
        let horizon = 4;
        let x0s: Vec<f64> = (0..rows * 2).map(|i| (i as f64 * 0.31).sin() * 0.5).collect();
        let controls: Vec<f64> = (0..rows * horizon).map(|i| (i as f64 * 0.17).cos() * 0.8).collect();
        let mut scratch = RolloutScratch::new();
        let mut batched = vec![0.0; rows * (horizon + 1) * 2];
        let mut fd = vec![0.0; rows * 2];
        let mut faults = vec![0u8; rows];
        rollout_rows(
            &p, &x0s, &controls, rows, horizon, 0.05, &mut scratch, &mut batched,
            Some(&mut fd), &mut faults,
        );
        assert!(faults.iter().all(|&f| f == 0));
        for r in 0..rows {
            let x0 = StateVector::new(x0s[r * 2..(r + 1) * 2].to_vec());
            let us: Vec<ControlVector> = (0..horizon)
                .map(|s| ControlVector::new(vec![controls[r * horizon + s]], lim(1)))
                .collect();
            let single = rollout(&p, &x0, &us, 0.05).unwrap();
            for (k, s) in single.states().iter().enumerate() {
                let got = &batched[r * (horizon + 1) * 2 + k * 2..r * (horizon + 1) * 2 + (k + 1) * 2];
                assert_eq!(got, s.as_slice(), "row {r} state {k}");
            }
            let deriv = predict_derivative(&p, &x0, &us[0]).unwrap();
            assert_eq!(&fd[r * 2..(r + 1) * 2], deriv.as_slice(), "row {r} first derivative");
        }
    }

    /// Timing probe for the planner-scale batch (256 candidates, 20 steps,
    /// arm-sized network). Run with `-- --ignored --nocapture` to see the
    /// per-batch wall clock; the real budget assertion lives in the
    /// acceptance suite.
    #[test]
    #[ignore]
    fn batched_rollout_timing_probe() {
        let (xdim, udim) = (6, 4);
        let p = ModelParams::seeded_init(Architecture::mlp(xdim, udim), 1);
        let (rows, horizon) = (256, 20);
        let x0s: Vec<f64> = (0..rows * xdim).map(|i| (i as f64 * 0.13).sin() * 0.4).collect();
        let controls: Vec<f64> = (0..rows * horizon * udim)
            .map(|i| (i as f64 * 0.07).cos() * 0.8)
            .collect();
        let mut scratch = RolloutScratch::new();
        let mut out = vec![0.0; rows * (horizon + 1) * xdim];
        let mut faults = vec![0u8; rows];
        // Warm up, then time.
        rollout_rows(&p, &x0s, &controls, rows, horizon, 0.05, &mut scratch, &mut out, None, &mut faults);
        let reps = 20;
        let start = std::time::Instant::now();
        for _ in 0..reps {
            rollout_rows(&p, &x0s, &controls, rows, horizon, 0.05, &mut scratch, &mut out, None, &mut faults);
        }
        let per_batch = start.elapsed().as_secs_f64() / reps as f64;
        println!("planner-scale batch: {:.2} ms", per_batch * 1e3);
        assert!(faults.iter().all(|&f| f == 0));
    }
}
