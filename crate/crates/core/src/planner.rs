//! Sampling-based receding-horizon planner.
//!
//! Each control tick the planner perturbs a nominal control sequence into
//! `n` candidates (candidate 0 is the unperturbed nominal), rolls every
//! candidate through the learned model in batched lockstep, scores each
//! predicted trajectory with a composite cost (tracking error, input
//! magnitude, input rate, obstacle-proximity penalty), and computes
//! exponential weights over the costs. The provisional optimal candidate
//! is the argmin; the weights are logged for diagnostics. Only the first
//! action of the finally selected sequence is executed by the caller —
//! the rest of the horizon is re-planned next tick, warm-started by
//! left-shifting this tick's solution.
//!
//! Candidates and their predictions stay paired by index inside
//! [`CandidateBatch`]; the safety filter picks an index and the executable
//! sequence is recovered by lookup, never recomputed.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rollout_rows, RolloutScratch, TrainedModel};
use crate::rng::RngStream;
use crate::safety::{barrier_value, BarrierShape};
use crate::types::{ControlLimits, ControlVector, StateVector, Trajectory};

/// Number of worker threads used for candidate rollouts (and, by the
/// harness, for parallel trials).
pub const WORKER_THREADS: usize = 4;

/// Candidates processed per parallel task. Fixed so results do not depend
/// on the worker count.
const CHUNK: usize = 64;

/// The shared worker pool. Built once; all parallel planning and trial
/// execution runs on it.
pub(crate) fn worker_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(WORKER_THREADS)
            .thread_name(|i| format!("worker-{i}"))
            .build()
            .expect("worker pool")
    })
}

/// How the nominal sequence is built at the start of each tick.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NominalPolicy {
    /// Left-shift the previously selected sequence by one step, repeating
    /// the last entry (receding-horizon warm start). Falls back to zeros
    /// when there is no previous solution.
    #[default]
    ShiftPrevious,
    /// Always start from the zero sequence (clamped into the limits).
    Zero,
}

/// Sampling distribution and selection parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Candidate count (≥ 2; candidate 0 is the nominal).
    pub n: usize,
    /// Horizon length in steps (≥ 1).
    pub horizon: usize,
    /// Temperature for exponential weighting (> 0).
    pub beta: f64,
    /// Perturbation standard deviation per control entry.
    pub stddev: Vec<f64>,
    #[serde(default)]
    pub nominal: NominalPolicy,
}

impl SamplerConfig {
    /// Desk-scale defaults: 256 candidates over a 20-step horizon.
    pub fn defaults(udim: usize) -> Self {
        SamplerConfig {
            n: 256,
            horizon: 20,
            beta: 1.0,
            stddev: vec![0.3; udim],
            nominal: NominalPolicy::ShiftPrevious,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("candidate count must be ≥ 2, got {}", self.n)));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be ≥ 1".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.beta)));
        }
        if self.stddev.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("sampling stddev entries must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Tracking target evaluated at absolute time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// A fixed point in state space.
    Waypoint { target: Vec<f64> },
    /// Piecewise-linear interpolation through time-stamped points,
    /// clamped at both ends. Times must be strictly increasing.
    Path { times: Vec<f64>, points: Vec<Vec<f64>> },
    /// A point moving at constant velocity: `start + velocity·t`.
    Moving { start: Vec<f64>, velocity: Vec<f64> },
}

impl Reference {
    /// Target state at absolute time `t`.
    pub fn target_at(&self, t: f64) -> Vec<f64> {
        match self {
            Reference::Waypoint { target } => target.clone(),
            Reference::Moving { start, velocity } => start
                .iter()
                .zip(velocity)
                .map(|(s, v)| s + v * t)
                .collect(),
            Reference::Path { times, points } => {
                if t <= times[0] {
                    return points[0].clone();
                }
                if t >= *times.last().unwrap() {
                    return points.last().unwrap().clone();
                }
                let j = times.partition_point(|&tj| tj <= t);
                let (t0, t1) = (times[j - 1], times[j]);
                let w = (t - t0) / (t1 - t0);
                points[j - 1]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| a + w * (b - a))
                    .collect()
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Reference::Waypoint { target } => target.len(),
            Reference::Moving { start, .. } => start.len(),
            Reference::Path { points, .. } => points.first().map_or(0, Vec::len),
        }
    }

    fn validate(&self, xdim: usize) -> Result<()> {
        if self.dim() != xdim {
            return Err(Error::Config(format!(
                "reference dimension {} does not match state dimension {xdim}",
                self.dim()
            )));
        }
        if let Reference::Path { times, points } = self {
            if times.len() != points.len() || times.is_empty() {
                return Err(Error::Config("path needs matching, non-empty times and points".into()));
            }
            if times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("path times must be strictly increasing".into()));
            }
            if points.iter().any(|p| p.len() != xdim) {
                return Err(Error::Config("path points must all match the state dimension".into()));
            }
        }
        Ok(())
    }
}

/// Stage- and penalty-cost definition for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub reference: Reference,
    /// Squared tracking-error weight per state dimension.
    pub track_weights: Vec<f64>,
    /// Weight on squared input magnitude.
    #[serde(default)]
    pub input_weight: f64,
    /// Weight on squared input rate (adjacent actions in the sequence).
    #[serde(default)]
    pub rate_weight: f64,
    /// Terminal squared-error weight per state dimension (empty = none).
    #[serde(default)]
    pub terminal_weights: Vec<f64>,
    /// Weight on the obstacle-proximity penalty.
    #[serde(default)]
    pub obstacle_weight: f64,
    /// The penalty activates when a barrier value drops below this
    /// (smooth quadratic hinge).
    #[serde(default = "default_soft_margin")]
    pub obstacle_soft_margin: f64,
    /// Barriers the proximity penalty is measured against (typically the
    /// same shapes the safety filter enforces).
    #[serde(default)]
    pub penalty_barriers: Vec<BarrierShape>,
}

fn default_soft_margin() -> f64 {
    0.1
}

impl TaskSpec {
    /// A pure tracking task: follow `reference` under the given per-state
    /// weights, no input or obstacle terms.
    pub fn tracking(reference: Reference, track_weights: Vec<f64>) -> Self {
        TaskSpec {
            reference,
            track_weights,
            input_weight: 0.0,
            rate_weight: 0.0,
            terminal_weights: Vec::new(),
            obstacle_weight: 0.0,
            obstacle_soft_margin: default_soft_margin(),
            penalty_barriers: Vec::new(),
        }
    }

    pub fn validate(&self, xdim: usize) -> Result<()> {
        self.reference.validate(xdim)?;
        if self.track_weights.len() != xdim {
            return Err(Error::Config(format!(
                "track weights length {} does not match state dimension {xdim}",
                self.track_weights.len()
            )));
        }
        if !self.terminal_weights.is_empty() && self.terminal_weights.len() != xdim {
            return Err(Error::Config("terminal weights must be empty or state-sized".into()));
        }
        let all = self
            .track_weights
            .iter()
            .chain(&self.terminal_weights)
            .chain([&self.input_weight, &self.rate_weight, &self.obstacle_weight]);
        let mut any_positive = false;
        for &w in all {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("cost weights must be finite and ≥ 0, got {w}")));
            }
            any_positive |= w > 0.0;
        }
        if !any_positive {
            return Err(Error::Config("at least one cost weight must be positive".into()));
        }
        if !(self.obstacle_soft_margin.is_finite() && self.obstacle_soft_margin >= 0.0) {
            return Err(Error::Config("obstacle soft margin must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// The paired result of one planning tick: `n` candidate control
/// sequences, their predicted trajectories, costs, and weights. Index `i`
/// always pairs `controls[i]` with `predictions[i]` — the pairing the
/// reciprocal lookup relies on.
#[derive(Clone, Debug)]
pub struct CandidateBatch {
    n: usize,
    horizon: usize,
    xdim: usize,
    udim: usize,
    dt: f64,
    t0: f64,
    limits: ControlLimits,
    /// `[n][horizon][udim]`
    controls: Vec<f64>,
    /// `[n][horizon + 1][xdim]`
    states: Vec<f64>,
    /// `[n][xdim]` — first-step predicted derivatives (the objects the
    /// safety filter compares).
    first_deriv: Vec<f64>,
    faults: Vec<u8>,
    costs: Vec<f64>,
    weights: Vec<f64>,
    optimal: usize,
    coverage_ok: bool,
}

impl CandidateBatch {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Index of the provisional optimal candidate (lowest cost, ties to
    /// the lowest index).
    pub fn optimal(&self) -> usize {
        self.optimal
    }

    /// False when the tick started outside the model's calibrated
    /// coverage box (the error bound is extrapolating).
    pub fn coverage_ok(&self) -> bool {
        self.coverage_ok
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Whether candidate `i`'s rollout produced non-finite states (its
    /// cost is +∞ and it can never be selected).
    pub fn is_faulted(&self, i: usize) -> bool {
        self.faults[i] != 0
    }

    pub fn first_derivative_of(&self, i: usize) -> &[f64] {
        &self.first_deriv[i * self.xdim..(i + 1) * self.xdim]
    }

    pub(crate) fn states_row(&self, i: usize) -> &[f64] {
        let w = (self.horizon + 1) * self.xdim;
        &self.states[i * w..(i + 1) * w]
    }

    pub(crate) fn controls_row(&self, i: usize) -> &[f64] {
        let w = self.horizon * self.udim;
        &self.controls[i * w..(i + 1) * w]
    }

    /// Candidate `i`'s control sequence.
    pub fn controls_of(&self, i: usize) -> Vec<ControlVector> {
        let row = self.controls_row(i);
        (0..self.horizon)
            .map(|k| {
                ControlVector::new(
                    row[k * self.udim..(k + 1) * self.udim].to_vec(),
                    self.limits.clone(),
                )
            })
            .collect()
    }

    /// Candidate `i`'s predicted trajectory.
    ///
    /// # Panics
    /// On a faulted candidate (non-finite prediction).
    pub fn prediction_of(&self, i: usize) -> Trajectory {
        assert!(
            !self.is_faulted(i),
            "candidate {i} diverged during rollout; it has no valid prediction"
        );
        let row = self.states_row(i);
        let states: Vec<StateVector> = (0..=self.horizon)
            .map(|k| StateVector::new(row[k * self.xdim..(k + 1) * self.xdim].to_vec()))
            .collect();
        Trajectory::new(states, self.controls_of(i), self.dt, self.t0)
            .expect("batch layout is a valid trajectory")
    }

    /// Weight-averaged first action across candidates — logged for
    /// diagnostics, never executed.
    pub fn weighted_mean_first_action(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.udim];
        for i in 0..self.n {
            let row = self.controls_row(i);
            for d in 0..self.udim {
                mean[d] += self.weights[i] * row[d];
            }
        }
        mean
    }
}

/// Draws the candidate control sequences: candidate 0 is the nominal
/// unchanged; candidate `i ≥ 1` adds per-entry Gaussian noise from child
/// stream `i`, entrywise clamped into the limits.
pub fn sample_controls(
    config: &SamplerConfig,
    nominal: &[ControlVector],
    limits: &ControlLimits,
    rng: &RngStream,
) -> Vec<Vec<ControlVector>> {
    assert_eq!(nominal.len(), config.horizon, "nominal must span the horizon");
    let udim = limits.dim();
    let mut nominal_flat = Vec::with_capacity(config.horizon * udim);
    for u in nominal {
        nominal_flat.extend_from_slice(u.as_slice());
    }
    let mut flat = vec![0.0; config.n * config.horizon * udim];
    sample_controls_flat(config, &nominal_flat, limits, rng, &mut flat);
    (0..config.n)
        .map(|i| {
            (0..config.horizon)
                .map(|k| {
                    let at = (i * config.horizon + k) * udim;
                    ControlVector::new(flat[at..at + udim].to_vec(), limits.clone())
                })
                .collect()
        })
        .collect()
}

/// Flat-buffer sampler shared by [`sample_controls`] and [`plan_step`];
/// one Gaussian draw per entry, step-major then dimension order.
fn sample_controls_flat(
    config: &SamplerConfig,
    nominal_flat: &[f64],
    limits: &ControlLimits,
    rng: &RngStream,
    out: &mut [f64],
) {
    let udim = limits.dim();
    let entries = config.horizon * udim;
    debug_assert_eq!(nominal_flat.len(), entries);
    debug_assert_eq!(out.len(), config.n * entries);
    out[..entries].copy_from_slice(nominal_flat);
    for i in 1..config.n {
        let mut stream = rng.child(i as u64);
        let row = &mut out[i * entries..(i + 1) * entries];
        for k in 0..config.horizon {
            for d in 0..udim {
                let g = stream.next_gaussian();
                row[k * udim + d] = nominal_flat[k * udim + d] + config.stddev[d] * g;
            }
            limits.clamp_in_place(&mut row[k * udim..(k + 1) * udim]);
        }
    }
}

/// Composite stage cost of one candidate, shared verbatim by the public
/// [`evaluate_cost`] and the batch path inside [`plan_step`] so the two
/// always agree bit for bit.
fn cost_row(
    states: &[f64],
    controls: &[f64],
    xdim: usize,
    udim: usize,
    horizon: usize,
    task: &TaskSpec,
    targets: &[f64],
) -> f64 {
    let mut cost = 0.0;
    for k in 1..=horizon {
        let x = &states[k * xdim..(k + 1) * xdim];
        let tg = &targets[(k - 1) * xdim..k * xdim];
        for d in 0..xdim {
            let e = x[d] - tg[d];
            cost += task.track_weights[d] * e * e;
        }
        let u = &controls[(k - 1) * udim..k * udim];
        let mut umag = 0.0;
        for &v in u {
            umag += v * v;
        }
        cost += task.input_weight * umag;
        if k >= 2 {
            let prev = &controls[(k - 2) * udim..(k - 1) * udim];
            let mut rate = 0.0;
            for d in 0..udim {
                let dv = u[d] - prev[d];
                rate += dv * dv;
            }
            cost += task.rate_weight * rate;
        }
        for shape in &task.penalty_barriers {
            let gap = task.obstacle_soft_margin - barrier_value(shape, x);
            if gap > 0.0 {
                cost += task.obstacle_weight * gap * gap;
            }
        }
    }
    if !task.terminal_weights.is_empty() {
        let x = &states[horizon * xdim..(horizon + 1) * xdim];
        let tg = &targets[(horizon - 1) * xdim..horizon * xdim];
        for d in 0..xdim {
            let e = x[d] - tg[d];
            cost += task.terminal_weights[d] * e * e;
        }
    }
    cost
}

fn targets_for(task: &TaskSpec, t0: f64, dt: f64, horizon: usize, xdim: usize) -> Vec<f64> {
    let mut targets = Vec::with_capacity(horizon * xdim);
    for k in 1..=horizon {
        let tg = task.reference.target_at(t0 + k as f64 * dt);
        debug_assert_eq!(tg.len(), xdim);
        targets.extend_from_slice(&tg);
    }
    targets
}

/// Composite cost of one predicted trajectory under its control sequence:
/// the sum over the horizon of weighted squared tracking error, input
/// magnitude and rate quadratics, and a smooth-hinge obstacle-proximity
/// penalty, plus an optional terminal term. Finite and ≥ 0 for finite
/// inputs.
pub fn evaluate_cost(prediction: &Trajectory, controls: &[ControlVector], task: &TaskSpec) -> f64 {
    let horizon = controls.len();
    assert_eq!(
        prediction.len(),
        horizon,
        "prediction must be one step longer than the control sequence"
    );
    let xdim = prediction.states()[0].dim();
    let udim = if horizon > 0 { controls[0].dim() } else { 0 };
    let mut states = Vec::with_capacity((horizon + 1) * xdim);
    for s in prediction.states() {
        states.extend_from_slice(s.as_slice());
    }
    let mut flat_u = Vec::with_capacity(horizon * udim);
    for u in controls {
        flat_u.extend_from_slice(u.as_slice());
    }
    let targets = targets_for(task, prediction.t0(), prediction.dt(), horizon, xdim);
    cost_row(&states, &flat_u, xdim, udim, horizon, task, &targets)
}

/// Normalized exponential weights `w_i ∝ exp(−(J_i − min J)/β)`.
///
/// The baseline subtraction makes the weights invariant to shifting all
/// costs by a constant and keeps the exponentials in range; exponents are
/// additionally floored at −700 so even hopeless candidates keep a
/// strictly positive (if vanishing) weight rather than underflowing to
/// zero. Candidates with non-finite cost (diverged rollouts) get weight
/// zero.
pub fn exponential_weights(costs: &[f64], beta: f64) -> Vec<f64> {
    assert!(beta > 0.0, "temperature must be positive");
    let min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return vec![0.0; costs.len()];
    }
    let mut weights: Vec<f64> = costs
        .iter()
        .map(|&c| {
            if c.is_finite() {
                (-(c - min) / beta).max(-700.0).exp()
            } else {
                0.0
            }
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= sum;
    }
    weights
}

fn argmin_finite(costs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &c) in costs.iter().enumerate() {
        if !c.is_finite() {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(j) if c < costs[j] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Index of the provisional optimal prediction: the smallest index
/// attaining the minimum cost.
pub fn select_optimal(batch: &CandidateBatch) -> Result<usize> {
    if batch.n() == 0 {
        return Err(Error::Planner("empty candidate batch".into()));
    }
    argmin_finite(batch.costs())
        .ok_or_else(|| Error::Planner("every candidate has non-finite cost".into()))
}

/// One full planning tick.
///
/// Builds the nominal sequence (left-shifting `previous` under the
/// shift-previous policy, zeros otherwise), samples `n` candidates, rolls
/// them all through the model in parallel lockstep, scores them, weights
/// them, and marks the argmin. The caller executes only the first action
/// of the finally selected sequence and passes that sequence back as
/// `previous` next tick.
///
/// `t_now` anchors the predictions and the reference lookup in absolute
/// time. Results are deterministic for a given `rng` regardless of worker
/// count: candidate `i` draws from child stream `i` and all buffers are
/// index-addressed.
#[allow(clippy::too_many_arguments)]
pub fn plan_step(
    model: &TrainedModel,
    x_now: &StateVector,
    t_now: f64,
    task: &TaskSpec,
    config: &SamplerConfig,
    limits: &ControlLimits,
    previous: Option<&[ControlVector]>,
    rng: &RngStream,
) -> Result<CandidateBatch> {
    config.validate()?;
    let xdim = x_now.dim();
    let udim = limits.dim();
    model.expect_dims(xdim, udim)?;
    task.validate(xdim)?;
    if config.stddev.len() != udim {
        return Err(Error::Config(format!(
            "stddev schedule length {} does not match control dimension {udim}",
            config.stddev.len()
        )));
    }
    let (n, horizon, dt) = (config.n, config.horizon, model.dt);

    // Nominal: warm-start left-shift of the previous solution.
    let mut nominal = vec![0.0; horizon * udim];
    match (config.nominal, previous) {
        (NominalPolicy::ShiftPrevious, Some(prev)) => {
            assert_eq!(prev.len(), horizon, "previous solution must span the horizon");
            for k in 0..horizon {
                let src = (k + 1).min(horizon - 1);
                nominal[k * udim..(k + 1) * udim].copy_from_slice(prev[src].as_slice());
            }
        }
        _ => {
            for k in 0..horizon {
                limits.clamp_in_place(&mut nominal[k * udim..(k + 1) * udim]);
            }
        }
    }

    let coverage_ok = model.bound.coverage.contains_state(x_now.as_slice());
    if !coverage_ok {
        log::warn!("planning from a state outside the calibrated coverage box");
    }

    let mut controls = vec![0.0; n * horizon * udim];
    sample_controls_flat(config, &nominal, limits, rng, &mut controls);

    // Batched lockstep rollouts in fixed-size chunks on the worker pool.
    let mut states = vec![0.0; n * (horizon + 1) * xdim];
    let mut first_deriv = vec![0.0; n * xdim];
    let mut faults = vec![0u8; n];
    let x0s: Vec<f64> = std::iter::repeat(x_now.as_slice())
        .take(n)
        .flatten()
        .copied()
        .collect();
    {
        let tasks: Vec<(usize, &[f64], &mut [f64], &mut [f64], &mut [u8])> = controls
            .chunks(CHUNK * horizon * udim)
            .zip(states.chunks_mut(CHUNK * (horizon + 1) * xdim))
            .zip(first_deriv.chunks_mut(CHUNK * xdim))
            .zip(faults.chunks_mut(CHUNK))
            .enumerate()
            .map(|(ci, (((c, s), fd), fl))| (ci, c, s, fd, fl))
            .collect();
        let params = &model.params;
        worker_pool().install(|| {
            tasks.into_par_iter().for_each(|(_, c, s, fd, fl)| {
                let rows = fl.len();
                let mut scratch = RolloutScratch::new();
                rollout_rows(
                    params,
                    &x0s[..rows * xdim],
                    c,
                    rows,
                    horizon,
                    dt,
                    &mut scratch,
                    s,
                    Some(fd),
                    fl,
                );
            });
        });
    }

    // Score sequentially (index order) with per-step targets shared
    // across candidates.
    let targets = targets_for(task, t_now, dt, horizon, xdim);
    let mut costs = vec![0.0; n];
    let srow = (horizon + 1) * xdim;
    let crow = horizon * udim;
    for i in 0..n {
        costs[i] = if faults[i] != 0 {
            f64::INFINITY
        } else {
            cost_row(
                &states[i * srow..(i + 1) * srow],
                &controls[i * crow..(i + 1) * crow],
                xdim,
                udim,
                horizon,
                task,
                &targets,
            )
        };
    }
    let optimal = argmin_finite(&costs)
        .ok_or_else(|| Error::Planner("every candidate diverged or has non-finite cost".into()))?;
    let weights = exponential_weights(&costs, config.beta);

    Ok(CandidateBatch {
        n,
        horizon,
        xdim,
        udim,
        dt,
        t0: t_now,
        limits: limits.clone(),
        controls,
        states,
        first_deriv,
        faults,
        costs,
        weights,
        optimal,
        coverage_ok,
    })
}
