//! Adaptive barrier safety filter and the reciprocal action lookup.
//!
//! A barrier function `h(x)` is positive strictly inside the safe region
//! and zero on its boundary. Each control tick the filter scores every
//! candidate's first-step predicted derivative `f` against the margin
//!
//! ```text
//! margin = Φ + Π
//! Π = ∇h·f − ‖∇h‖·ε̄          (barrier derivative minus worst-case model error)
//! Φ = θ̂·∇h + α·h              (adaptive uncertainty term plus class-K relaxation)
//! ```
//!
//! where `ε̄` is the calibrated model-error bound and `θ̂` is an online
//! estimate of unmodeled drift, updated by the projected gradient law
//! `θ̂ ← Proj(θ̂ − Γ·∇h·dt)`. A candidate is admissible when its margin is
//! non-negative for every barrier. If the planner's optimal candidate is
//! admissible it passes through untouched; otherwise the filter swaps in
//! the admissible candidate nearest to it, and if no candidate is
//! admissible it takes the least-unsafe one and flags the event. The
//! selected prediction maps back to its control sequence by index — the
//! candidate batch keeps predictions and controls paired, so the lookup
//! needs no computation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::euler_step;
use crate::planner::CandidateBatch;
use crate::types::{ControlVector, StateVector, Trajectory};

/// Geometry of one safety constraint. All shapes act on a subset of the
/// state dimensions (e.g. the planar position of a swimmer) and leave the
/// rest of the gradient zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BarrierShape {
    /// Keep-out ball: `h = ‖p − center‖² − radius²`.
    Obstacle {
        dims: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
    /// Stay within a lateral band around `center` on one coordinate:
    /// `h = half_width² − (x_d − center)²`.
    Corridor {
        dim: usize,
        center: f64,
        half_width: f64,
    },
    /// Stay inside `[lo, hi]` on one coordinate: `h = (x_d − lo)(hi − x_d)`.
    RegionBand { dim: usize, lo: f64, hi: f64 },
    /// Stay inside an axis-aligned box: `h = min_d (x_d − lo_d)(hi_d − x_d)`.
    /// Piecewise smooth; the gradient follows the tightest face.
    Box {
        dims: Vec<usize>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

/// A barrier plus its class-K relaxation gain `α` (units 1/s): larger `α`
/// tolerates faster approach toward the boundary deep inside the safe set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Barrier {
    pub shape: BarrierShape,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl Barrier {
    pub fn new(shape: BarrierShape) -> Self {
        Barrier { shape, alpha: default_alpha() }
    }
}

/// Evaluates the barrier value `h(x)`. Positive strictly inside the safe
/// region, zero on the boundary.
pub fn barrier_value(shape: &BarrierShape, x: &[f64]) -> f64 {
    match shape {
        BarrierShape::Obstacle { dims, center, radius } => {
            let mut sq = 0.0;
            for (i, &d) in dims.iter().enumerate() {
                let e = x[d] - center[i];
                sq += e * e;
            }
            sq - radius * radius
        }
        BarrierShape::Corridor { dim, center, half_width } => {
            let y = x[*dim] - center;
            half_width * half_width - y * y
        }
        BarrierShape::RegionBand { dim, lo, hi } => (x[*dim] - lo) * (hi - x[*dim]),
        BarrierShape::Box { dims, lo, hi } => {
            let mut min = f64::INFINITY;
            for (i, &d) in dims.iter().enumerate() {
                min = min.min((x[d] - lo[i]) * (hi[i] - x[d]));
            }
            min
        }
    }
}

/// Evaluates the barrier and its analytic state gradient (full state
/// dimension; coordinates the barrier ignores get zero).
pub fn barrier_eval(shape: &BarrierShape, x: &StateVector) -> (f64, Vec<f64>) {
    let xs = x.as_slice();
    let mut grad = vec![0.0; xs.len()];
    let h = match shape {
        BarrierShape::Obstacle { dims, center, radius } => {
            let mut sq = 0.0;
            for (i, &d) in dims.iter().enumerate() {
                let e = xs[d] - center[i];
                sq += e * e;
                grad[d] = 2.0 * e;
            }
            sq - radius * radius
        }
        BarrierShape::Corridor { dim, center, half_width } => {
            let y = xs[*dim] - center;
            grad[*dim] = -2.0 * y;
            half_width * half_width - y * y
        }
        BarrierShape::RegionBand { dim, lo, hi } => {
            grad[*dim] = hi + lo - 2.0 * xs[*dim];
            (xs[*dim] - lo) * (hi - xs[*dim])
        }
        BarrierShape::Box { dims, lo, hi } => {
            let mut min = f64::INFINITY;
            let mut active = 0;
            for (i, &d) in dims.iter().enumerate() {
                let v = (xs[d] - lo[i]) * (hi[i] - xs[d]);
                if v < min {
                    min = v;
                    active = i;
                }
            }
            let d = dims[active];
            grad[d] = hi[active] + lo[active] - 2.0 * xs[d];
            min
        }
    };
    (h, grad)
}

/// Online estimate of unmodeled drift, in the units of the derivative
/// field, with its adaptation gain and projection bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveEstimate {
    pub theta: Vec<f64>,
    /// Adaptation gain Γ ≥ 0. Zero freezes the estimate.
    pub gain: f64,
    /// Projection bound: ‖θ̂‖ never exceeds this.
    pub theta_max: f64,
}

impl AdaptiveEstimate {
    pub fn zeros(xdim: usize, gain: f64, theta_max: f64) -> Self {
        assert!(gain >= 0.0 && theta_max >= 0.0);
        AdaptiveEstimate {
            theta: vec![0.0; xdim],
            gain,
            theta_max,
        }
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum::<f64>().sqrt()
    }
}

/// One step of the projected adaptation law
/// `θ̂ ← Proj_{‖·‖ ≤ θ_max}(θ̂ − Γ·∇h·dt)`.
pub fn update_adaptive(est: &AdaptiveEstimate, grad: &[f64], dt: f64) -> AdaptiveEstimate {
    assert!(dt > 0.0, "adaptation step must be positive");
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut theta = euler_step(&est.theta, &neg, est.gain, dt);
    let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm > est.theta_max {
        let scale = est.theta_max / norm;
        for t in theta.iter_mut() {
            *t *= scale;
        }
    }
    AdaptiveEstimate {
        theta,
        gain: est.gain,
        theta_max: est.theta_max,
    }
}

/// Admissibility margin `Φ + Π` of one candidate derivative against one
/// barrier:
///
/// - `Π = ∇h·f − ‖∇h‖·ε̄` — the candidate's effect on the barrier minus
///   the worst-case erosion a model error of size `ε̄` could cause;
/// - `Φ = θ̂·∇h + α·h` — the adaptive drift estimate's effect plus the
///   class-K relaxation (for the shipped barriers `h` does not depend on
///   `θ̂`, so that partial is zero).
///
/// The candidate is admissible iff the margin is ≥ 0.
pub fn admissibility_margin(
    f_candidate: &[f64],
    x: &StateVector,
    barrier: &Barrier,
    est: &AdaptiveEstimate,
    eps: f64,
) -> f64 {
    debug_assert!(eps >= 0.0);
    let (h, grad) = barrier_eval(&barrier.shape, x);
    margin_from_parts(f_candidate, h, &grad, barrier.alpha, est, eps)
}

/// Margin with the barrier value and gradient already evaluated — the
/// per-candidate work inside the filter, where `h` and `∇h` are shared.
fn margin_from_parts(
    f_candidate: &[f64],
    h: f64,
    grad: &[f64],
    alpha: f64,
    est: &AdaptiveEstimate,
    eps: f64,
) -> f64 {
    let mut gf = 0.0;
    let mut gg = 0.0;
    let mut gt = 0.0;
    for (d, &g) in grad.iter().enumerate() {
        gf += g * f_candidate[d];
        gg += g * g;
        gt += g * est.theta[d];
    }
    let pi = gf - gg.sqrt() * eps;
    let phi = gt + alpha * h;
    phi + pi
}

/// How candidate distance to the optimal prediction is measured when the
/// filter has to substitute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Euclidean distance between first-step predicted derivatives.
    #[default]
    FirstDerivative,
    /// L2 distance between the full predicted state trajectories.
    FullTrajectory,
}

/// Outcome of one filter pass.
#[derive(Clone, Debug)]
pub struct FilterDecision {
    /// Index of the candidate that will be executed.
    pub index: usize,
    /// Safe prediction: the selected candidate's predicted trajectory.
    pub prediction: Trajectory,
    /// Safe input sequence paired with the prediction.
    pub controls: Vec<ControlVector>,
    /// True when the optimal candidate was rejected and another was
    /// substituted.
    pub intervened: bool,
    /// True when no candidate was admissible and the least-unsafe one was
    /// taken. Always implies `intervened`.
    pub fallback: bool,
    /// The selected candidate's margin (worst across barriers) at
    /// decision time.
    pub margin: f64,
    /// Number of admissible candidates.
    pub admissible: usize,
}

fn candidate_distance(batch: &CandidateBatch, i: usize, opt: usize, metric: DistanceMetric) -> f64 {
    let (a, b) = match metric {
        DistanceMetric::FirstDerivative => {
            (batch.first_derivative_of(i), batch.first_derivative_of(opt))
        }
        DistanceMetric::FullTrajectory => (batch.states_row(i), batch.states_row(opt)),
    };
    let mut sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let e = x - y;
        sq += e * e;
    }
    sq.sqrt()
}

/// Filters the planner's provisional optimal candidate through the
/// adaptive safe set.
///
/// Every candidate's first-step predicted derivative is scored against
/// every barrier; a candidate is admissible when its worst margin is
/// ≥ 0. If the optimal candidate is admissible it is passed through
/// bit-identically (`intervened = false`). Otherwise the admissible
/// candidate nearest to the optimal one (per `metric`; ties broken by
/// lower cost, then lower index) is substituted. If no candidate is
/// admissible, the max-margin candidate is returned with `fallback`
/// set — a defined action every tick, never a halt.
pub fn filter_select(
    batch: &CandidateBatch,
    optimal: usize,
    x: &StateVector,
    barriers: &[Barrier],
    estimates: &[AdaptiveEstimate],
    eps: f64,
    metric: DistanceMetric,
) -> Result<FilterDecision> {
    if batch.n() == 0 {
        return Err(Error::Planner("cannot filter an empty candidate batch".into()));
    }
    if optimal >= batch.n() {
        return Err(Error::Mapping {
            index: optimal,
            len: batch.n(),
        });
    }
    assert_eq!(
        barriers.len(),
        estimates.len(),
        "one adaptive estimate per barrier"
    );

    // Shared per-barrier geometry at the current state.
    let parts: Vec<(f64, Vec<f64>, f64)> = barriers
        .iter()
        .map(|b| {
            let (h, grad) = barrier_eval(&b.shape, x);
            (h, grad, b.alpha)
        })
        .collect();

    let margin_of = |i: usize| -> f64 {
        let f = batch.first_derivative_of(i);
        let mut worst = f64::INFINITY;
        for (b, (h, grad, alpha)) in parts.iter().enumerate() {
            let m = margin_from_parts(f, *h, grad, *alpha, &estimates[b], eps);
            worst = worst.min(m);
        }
        if parts.is_empty() {
            f64::INFINITY
        } else {
            worst
        }
    };

    let margins: Vec<f64> = (0..batch.n()).map(margin_of).collect();
    let admissible = margins.iter().filter(|&&m| m >= 0.0).count();

    let decide = |index: usize, intervened: bool, fallback: bool| FilterDecision {
        index,
        prediction: batch.prediction_of(index),
        controls: batch.controls_of(index),
        intervened,
        fallback,
        margin: margins[index],
        admissible,
    };

    if margins[optimal] >= 0.0 {
        return Ok(decide(optimal, false, false));
    }

    // Nearest admissible candidate; ties by lower cost, then lower index.
    let mut pick: Option<(usize, f64)> = None;
    for i in 0..batch.n() {
        if margins[i] < 0.0 {
            continue;
        }
        let d = candidate_distance(batch, i, optimal, metric);
        let better = match pick {
            None => true,
            Some((j, dj)) => {
                d < dj
                    || (d == dj
                        && (batch.costs()[i] < batch.costs()[j]
                            || (batch.costs()[i] == batch.costs()[j] && i < j)))
            }
        };
        if better {
            pick = Some((i, d));
        }
    }
    if let Some((i, _)) = pick {
        return Ok(decide(i, true, false));
    }

    // No admissible candidate: least-unsafe fallback, flagged.
    let mut best = 0;
    for i in 1..batch.n() {
        if margins[i] > margins[best] {
            best = i;
        }
    }
    log::warn!(
        "safety fallback: no admissible candidate (worst margin {:.3e})",
        margins[best]
    );
    Ok(decide(best, true, true))
}

/// Retrieves the control sequence paired with the selected prediction —
/// a pure index lookup, since the batch never separates the pair.
pub fn reciprocal_map(batch: &CandidateBatch, selected: usize) -> Result<Vec<ControlVector>> {
    if selected >= batch.n() {
        return Err(Error::Mapping {
            index: selected,
            len: batch.n(),
        });
    }
    Ok(batch.controls_of(selected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelParams, TrainedModel};
    use crate::planner::{plan_step, NominalPolicy, Reference, SamplerConfig, TaskSpec};
    use crate::rng::RngStream;
    use crate::types::ControlLimits;

    fn obstacle(cx: f64, cy: f64, r: f64) -> BarrierShape {
        BarrierShape::Obstacle {
            dims: vec![0, 1],
            center: vec![cx, cy],
            radius: r,
        }
    }

    #[test]
    fn obstacle_boundary_is_zero() {
        let shape = obstacle(1.0, 0.0, 0.5);
        let x = StateVector::new(vec![0.5, 0.0, 9.9]);
        let (h, grad) = barrier_eval(&shape, &x);
        assert_eq!(h, 0.0);
        assert_eq!(grad, vec![-1.0, 0.0, 0.0]);
    }

    /// Corridor of half-width 0.05 evaluated on the centerline.
    #[test]
    fn corridor_centerline_value_and_gradient() {
        let shape = BarrierShape::Corridor {
            dim: 1,
            center: 0.0,
            half_width: 0.05,
        };
        let (h, grad) = barrier_eval(&shape, &StateVector::new(vec![0.7, 0.0]));
        assert_eq!(h, 0.05 * 0.05);
        assert!((h - 0.0025).abs() < 1e-17);
        assert_eq!(grad[1], 0.0);
    }

    fn fd_gradient(shape: &BarrierShape, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|d| {
                let mut up = x.to_vec();
                up[d] += h;
                let mut dn = x.to_vec();
                dn[d] -= h;
                (barrier_value(shape, &up) - barrier_value(shape, &dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(31);
        let shapes = vec![
            obstacle(0.3, -0.2, 0.4),
            obstacle(-1.0, 0.5, 0.2),
            BarrierShape::Corridor { dim: 1, center: 0.1, half_width: 0.3 },
            BarrierShape::Corridor { dim: 2, center: -0.4, half_width: 0.8 },
            BarrierShape::RegionBand { dim: 0, lo: -0.5, hi: 0.9 },
            BarrierShape::RegionBand { dim: 2, lo: 0.0, hi: 2.0 },
            BarrierShape::Box { dims: vec![0, 1], lo: vec![-1.0, -0.8], hi: vec![1.0, 0.8] },
            BarrierShape::Box { dims: vec![1, 2], lo: vec![-0.3, -0.6], hi: vec![0.4, 0.7] },
            obstacle(0.0, 0.0, 1.0),
            BarrierShape::RegionBand { dim: 1, lo: -2.0, hi: -0.5 },
        ];
        for (si, shape) in shapes.iter().enumerate() {
            for _ in 0..5 {
                let x: Vec<f64> = (0..3).map(|_| 3.0 * rng.next_uniform() - 1.5).collect();
                let (_, grad) = barrier_eval(shape, &StateVector::new(x.clone()));
                let fd = fd_gradient(shape, &x);
                for d in 0..3 {
                    let denom = fd[d].abs().max(1e-3);
                    assert!(
                        (grad[d] - fd[d]).abs() / denom <= 1e-5,
                        "shape {si} dim {d}: analytic {} vs fd {}",
                        grad[d],
                        fd[d]
                    );
                }
            }
        }
    }

    #[test]
    fn adaptation_zero_gradient_is_identity() {
        let est = AdaptiveEstimate::zeros(2, 1.0, 10.0);
        let out = update_adaptive(&est, &[0.0, 0.0], 0.1);
        assert_eq!(out.theta, est.theta);
    }

    #[test]
    fn adaptation_single_step_arithmetic() {
        let est = AdaptiveEstimate::zeros(2, 1.0, 10.0);
        let out = update_adaptive(&est, &[1.0, 0.0], 0.1);
        assert_eq!(out.theta, vec![-0.1, 0.0]);
    }

    #[test]
    fn adaptation_projects_onto_norm_ball() {
        let mut est = AdaptiveEstimate::zeros(2, 1.0, 0.5);
        for _ in 0..100 {
            est = update_adaptive(&est, &[1.0, -2.0], 0.1);
            assert!(est.norm() <= 0.5 + 1e-12);
        }
        // Saturated: direction matches -grad, norm is exactly the bound.
        assert!((est.norm() - 0.5).abs() < 1e-12);
        let expected = [-1.0 / 5.0f64.sqrt() * 0.5, 2.0 / 5.0f64.sqrt() * 0.5];
        assert!((est.theta[0] - expected[0]).abs() < 1e-12);
        assert!((est.theta[1] - expected[1]).abs() < 1e-12);
    }

    /// The discrete law converges to the continuous solution of
    /// dθ/dt = −Γ·g(t) at first order: halving dt halves the error.
    #[test]
    fn adaptation_is_first_order_in_dt() {
        let g = |t: f64| [t.sin(), (2.0 * t).cos()];
        let horizon = 2.0f64;
        // Continuous solution: θ(T) = −Γ ∫ g dt, Γ = 1.
        let exact = [-(1.0 - horizon.cos()), -(2.0 * horizon).sin() / 2.0];
        let run = |dt: f64| -> [f64; 2] {
            let mut est = AdaptiveEstimate::zeros(2, 1.0, 100.0);
            let steps = (horizon / dt).round() as usize;
            for k in 0..steps {
                est = update_adaptive(&est, &g(k as f64 * dt), dt);
            }
            [est.theta[0], est.theta[1]]
        };
        let err = |th: [f64; 2]| ((th[0] - exact[0]).powi(2) + (th[1] - exact[1]).powi(2)).sqrt();
        let e1 = err(run(0.01));
        let e2 = err(run(0.005));
        let ratio = e1 / e2;
        assert!((1.7..2.3).contains(&ratio), "convergence ratio {ratio}");
    }

    #[test]
    fn margin_of_static_interior_point_is_alpha_h() {
        let barrier = Barrier { shape: obstacle(0.0, 0.0, 0.5), alpha: 2.0 };
        let est = AdaptiveEstimate::zeros(2, 1.0, 10.0);
        let x = StateVector::new(vec![1.0, 0.0]);
        let m = admissibility_margin(&[0.0, 0.0], &x, &barrier, &est, 0.0);
        let h = 1.0 - 0.25;
        assert_eq!(m, 2.0 * h);
        assert!(m > 0.0);
    }

    #[test]
    fn margin_monotone_in_along_gradient_component() {
        let barrier = Barrier::new(obstacle(0.0, 0.0, 0.5));
        let est = AdaptiveEstimate::zeros(2, 1.0, 10.0);
        let x = StateVector::new(vec![1.0, 0.0]);
        let mut last = f64::NEG_INFINITY;
        for s in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let m = admissibility_margin(&[s, 0.3], &x, &barrier, &est, 0.1);
            assert!(m > last);
            last = m;
        }
    }

    /// Margin as a function of ε̄ is affine with slope −‖∇h‖.
    #[test]
    fn margin_is_affine_in_model_error_bound() {
        let barrier = Barrier::new(obstacle(0.2, -0.1, 0.3));
        let mut est = AdaptiveEstimate::zeros(2, 1.0, 10.0);
        est.theta = vec![0.05, -0.02];
        let x = StateVector::new(vec![0.8, 0.4]);
        let f = [0.3, -0.6];
        let m0 = admissibility_margin(&f, &x, &barrier, &est, 0.0);
        let m1 = admissibility_margin(&f, &x, &barrier, &est, 0.5);
        let m2 = admissibility_margin(&f, &x, &barrier, &est, 1.0);
        let (_, grad) = barrier_eval(&barrier.shape, &x);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let slope = (m1 - m0) / 0.5;
        assert!((slope + gnorm).abs() < 1e-12);
        // Affine: midpoint matches.
        assert!((m2 - (2.0 * m1 - m0)).abs() < 1e-12);
    }

    // --- Filter tests over real candidate batches -----------------------

    /// Hand-set model x' = u (2-state, 2-input identity field), so each
    /// candidate's first-step derivative equals its first action.
    fn identity_model() -> TrainedModel {
        let arch = Architecture::linear(2, 2);
        let mut p = ModelParams::zeros(arch);
        // Wt layout [in][out], inputs (x0, x1, u0, u1) -> outputs (x0', x1').
        let w = p.raw_mut();
        w[2 * 2] = 1.0; // u0 -> x0'
        w[3 * 2 + 1] = 1.0; // u1 -> x1'
        let coverage = crate::model::CoverageBox {
            x_lo: vec![-10.0; 2],
            x_hi: vec![10.0; 2],
            u_lo: vec![-1.0; 2],
            u_hi: vec![1.0; 2],
        };
        TrainedModel::new(
            p,
            crate::model::ErrorBound { epsilon: 0.0, coverage },
            0.05,
        )
    }

    fn batch_toward(target: [f64; 2], x: &StateVector, seed: u64, n: usize) -> CandidateBatch {
        let model = identity_model();
        let task = TaskSpec::tracking(Reference::Waypoint { target: vec![target[0], target[1]] }, vec![1.0, 1.0]);
        let config = SamplerConfig {
            n,
            horizon: 4,
            beta: 1.0,
            stddev: vec![0.6, 0.6],
            nominal: NominalPolicy::Zero,
        };
        plan_step(
            &model,
            x,
            0.0,
            &task,
            &config,
            &ControlLimits::symmetric(2, 1.0),
            None,
            &RngStream::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn passive_when_optimal_is_admissible() {
        let x = StateVector::new(vec![0.0, 0.0]);
        let batch = batch_toward([1.0, 0.0], &x, 7, 16);
        // Obstacle far away: everything is admissible.
        let barriers = [Barrier::new(obstacle(-5.0, -5.0, 0.5))];
        let ests = [AdaptiveEstimate::zeros(2, 1.0, 10.0)];
        let d = filter_select(&batch, batch.optimal(), &x, &barriers, &ests, 0.0, DistanceMetric::FirstDerivative).unwrap();
        assert!(!d.intervened);
        assert!(!d.fallback);
        assert_eq!(d.index, batch.optimal());
        assert_eq!(d.admissible, 16);
        // Bit-identical pass-through.
        assert_eq!(d.prediction.states(), batch.prediction_of(batch.optimal()).states());
        for (a, b) in d.controls.iter().zip(batch.controls_of(batch.optimal())) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn substitution_matches_brute_force_scan() {
        let x = StateVector::new(vec![0.6, 0.0]);
        // Obstacle dead ahead: marching toward the target is inadmissible.
        let batch = batch_toward([2.0, 0.0], &x, 11, 8);
        let barriers = [Barrier { shape: obstacle(0.9, 0.0, 0.25), alpha: 0.5 }];
        let ests = [AdaptiveEstimate::zeros(2, 1.0, 10.0)];
        let eps = 0.05;
        let d = filter_select(&batch, batch.optimal(), &x, &barriers, &ests, eps, DistanceMetric::FirstDerivative).unwrap();

        // Brute force replay.
        let margins: Vec<f64> = (0..batch.n())
            .map(|i| {
                admissibility_margin(batch.first_derivative_of(i), &x, &barriers[0], &ests[0], eps)
            })
            .collect();
        assert!(margins[batch.optimal()] < 0.0, "test needs an inadmissible optimal");
        let admissible: Vec<usize> = (0..batch.n()).filter(|&i| margins[i] >= 0.0).collect();
        assert!(!admissible.is_empty() && admissible.len() < batch.n());
        let fo = batch.first_derivative_of(batch.optimal()).to_vec();
        let dist = |i: usize| -> f64 {
            batch
                .first_derivative_of(i)
                .iter()
                .zip(&fo)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let best = admissible
            .iter()
            .copied()
            .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
            .unwrap();
        assert!(d.intervened);
        assert!(!d.fallback);
        assert_eq!(d.index, best);
        assert_eq!(d.admissible, admissible.len());
    }

    #[test]
    fn all_inadmissible_returns_flagged_max_margin() {
        let x = StateVector::new(vec![0.29, 0.0]);
        let batch = batch_toward([2.0, 0.0], &x, 13, 8);
        // The state is already inside the obstacle: h < 0 everywhere and
        // alpha·h dominates, so no candidate can be admissible.
        let barriers = [Barrier { shape: obstacle(0.3, 0.0, 0.28), alpha: 50.0 }];
        let ests = [AdaptiveEstimate::zeros(2, 1.0, 10.0)];
        let d = filter_select(&batch, batch.optimal(), &x, &barriers, &ests, 0.0, DistanceMetric::FirstDerivative).unwrap();
        assert!(d.intervened && d.fallback);
        assert_eq!(d.admissible, 0);
        let margins: Vec<f64> = (0..batch.n())
            .map(|i| admissibility_margin(batch.first_derivative_of(i), &x, &barriers[0], &ests[0], 0.0))
            .collect();
        let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(margins[d.index], max);
        assert!(d.margin < 0.0);
    }

    /// No admissible candidate is strictly closer to the optimal than the
    /// substituted one, over randomized batches.
    #[test]
    fn substitution_minimality_randomized() {
        for seed in 0..20u64 {
            let x = StateVector::new(vec![0.55, 0.1 * (seed as f64 % 3.0) - 0.1]);
            let batch = batch_toward([2.0, 0.0], &x, 1000 + seed, 32);
            let barriers = [Barrier { shape: obstacle(0.85, 0.0, 0.22), alpha: 0.5 }];
            let ests = [AdaptiveEstimate::zeros(2, 1.0, 10.0)];
            let eps = 0.02;
            let d = filter_select(&batch, batch.optimal(), &x, &barriers, &ests, eps, DistanceMetric::FirstDerivative).unwrap();
            if !d.intervened || d.fallback {
                continue;
            }
            let fo = batch.first_derivative_of(batch.optimal()).to_vec();
            let dist = |i: usize| -> f64 {
                batch
                    .first_derivative_of(i)
                    .iter()
                    .zip(&fo)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            };
            for i in 0..batch.n() {
                let m = admissibility_margin(batch.first_derivative_of(i), &x, &barriers[0], &ests[0], eps);
                if m >= 0.0 {
                    assert!(
                        dist(i) >= dist(d.index),
                        "seed {seed}: candidate {i} strictly closer than selected {}",
                        d.index
                    );
                }
            }
        }
    }

    /// Growing ε̄ never enlarges the admissible set.
    #[test]
    fn admissible_set_shrinks_with_model_error() {
        let x = StateVector::new(vec![0.6, 0.05]);
        let batch = batch_toward([2.0, 0.0], &x, 21, 24);
        let barrier = Barrier { shape: obstacle(0.95, 0.0, 0.25), alpha: 0.5 };
        let est = AdaptiveEstimate::zeros(2, 1.0, 10.0);
        let sets: Vec<Vec<usize>> = [0.0, 0.1, 0.3, 0.6]
            .iter()
            .map(|&eps| {
                (0..batch.n())
                    .filter(|&i| {
                        admissibility_margin(batch.first_derivative_of(i), &x, &barrier, &est, eps)
                            >= 0.0
                    })
                    .collect()
            })
            .collect();
        for w in sets.windows(2) {
            assert!(w[1].iter().all(|i| w[0].contains(i)), "set grew with eps");
        }
        assert!(sets[0].len() > sets[3].len(), "test should actually shrink the set");
    }

    #[test]
    fn reciprocal_map_is_an_index_bijection() {
        let x = StateVector::new(vec![0.0, 0.0]);
        let batch = batch_toward([1.0, 1.0], &x, 5, 12);
        for i in 0..batch.n() {
            let u = reciprocal_map(&batch, i).unwrap();
            // Forward: the batch pairs u with prediction i. Inverse: the
            // sequence is literally candidate i's controls.
            for (k, uk) in u.iter().enumerate() {
                assert_eq!(uk.as_slice(), batch.controls_of(i)[k].as_slice());
            }
        }
        assert!(matches!(
            reciprocal_map(&batch, 12),
            Err(Error::Mapping { index: 12, len: 12 })
        ));
    }

    #[test]
    fn executed_action_comes_from_selected_candidate() {
        let x = StateVector::new(vec![0.6, 0.0]);
        let batch = batch_toward([2.0, 0.0], &x, 11, 8);
        let barriers = [Barrier { shape: obstacle(0.9, 0.0, 0.25), alpha: 0.5 }];
        let ests = [AdaptiveEstimate::zeros(2, 1.0, 10.0)];
        let d = filter_select(&batch, batch.optimal(), &x, &barriers, &ests, 0.05, DistanceMetric::FirstDerivative).unwrap();
        let u = reciprocal_map(&batch, d.index).unwrap();
        assert_eq!(u[0].as_slice(), batch.controls_of(d.index)[0].as_slice());
        assert_eq!(u[0].as_slice(), d.controls[0].as_slice());
    }
}
