//! Closed-loop execution of scenarios: excitation-data collection, model
//! training/calibration, and the per-tick control loop for every
//! controller variant.
//!
//! Determinism contract: everything except wall-clock timing fields is a
//! pure function of the scenario (including its seed). Randomness flows
//! through counter-based streams derived from the scenario seed — one
//! branch for data collection, one per trial, and within a trial one
//! branch for plant noise plus one per planning tick — so results do not
//! depend on scheduling or trial execution order.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::baselines::{continuous_stimulation_step, pid_step, PidState};
use crate::harness::runlog::{summarize, RunLog, RunRecord};
use crate::harness::scenario::{CollectConfig, Controller, Scenario};
use crate::model::{calibrate_error_bound, train, Architecture, Dataset, TrainedModel};
use crate::planner::{plan_step, worker_pool};
use crate::plants::{PlantSpec, Stimulus};
use crate::rng::RngStream;
use crate::safety::{
    barrier_eval, barrier_value, filter_select, reciprocal_map, update_adaptive,
    AdaptiveEstimate,
};
use crate::types::{ControlVector, Trajectory};

/// Seed-stream branch indices under the scenario root. Trials use
/// `TRIAL_BRANCH_BASE + trial`.
const COLLECT_BRANCH: u64 = 0;
const TRIAL_BRANCH_BASE: u64 = 1;

/// Result of one trial: the log, or the error that aborted it. Other
/// trials proceed regardless.
#[derive(Debug)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub result: Result<RunLog>,
}

/// The random stream excitation-data collection draws from for a given
/// scenario seed. Exposed so an out-of-process collect step feeds the
/// exact same data into training that [`train_for_scenario`] would use
/// inline, making the two pipelines produce identical checkpoints.
pub fn collection_stream(scenario_seed: u64) -> RngStream {
    RngStream::new(scenario_seed).child(COLLECT_BRANCH)
}

/// Drive the plant with smooth filtered-noise excitation and record the
/// visited trajectories for system identification.
///
/// Each trajectory restarts the plant from its configured initial value
/// (so slow hidden states such as habituation reset per trajectory) and
/// uses its own child stream of `rng`. The excitation is a per-dimension
/// Ornstein–Uhlenbeck-style low-pass of white noise with stationary
/// standard deviation `excitation_scale × half-range`, clamped to the
/// control limits.
pub fn collect_trajectories(
    plant_spec: &PlantSpec,
    config: &CollectConfig,
    dt: f64,
    rng: &RngStream,
) -> Vec<Trajectory> {
    let limits = plant_spec.limits();
    let udim = limits.dim();
    let rho = (-dt / config.excitation_tau).exp();
    let drive = (1.0 - rho * rho).sqrt();
    let mut trajectories = Vec::with_capacity(config.trajectories);
    for i in 0..config.trajectories {
        let mut stream = rng.child(i as u64);
        let mut plant = plant_spec.instantiate();
        let mut excitation = vec![0.0; udim];
        let mut states = Vec::with_capacity(config.steps + 1);
        let mut controls = Vec::with_capacity(config.steps);
        states.push(plant.state());
        for _ in 0..config.steps {
            let mut u = vec![0.0; udim];
            for d in 0..udim {
                let half_range = 0.5 * (limits.hi[d] - limits.lo[d]);
                let center = 0.5 * (limits.hi[d] + limits.lo[d]);
                excitation[d] = rho * excitation[d]
                    + drive * config.excitation_scale * half_range * stream.next_gaussian();
                u[d] = center + excitation[d];
            }
            let u = ControlVector::new(u, limits.clone());
            plant.step(u.as_slice(), dt, &mut stream);
            states.push(plant.state());
            controls.push(u);
        }
        trajectories.push(
            Trajectory::new(states, controls, dt, 0.0)
                .expect("excitation recording is structurally valid"),
        );
    }
    trajectories
}

/// Collect, train, and calibrate the model a scenario's planner will use.
/// Deterministic in the scenario (seeded from `scenario.seed`).
pub fn train_for_scenario(scenario: &Scenario) -> Result<TrainedModel> {
    scenario.validate()?;
    let rig = scenario
        .model
        .collect
        .plant
        .clone()
        .unwrap_or_else(|| scenario.plant.clone());
    let rng = collection_stream(scenario.seed);
    let trajectories =
        collect_trajectories(&rig, &scenario.model.collect, scenario.dt, &rng);
    let dataset = Dataset::split_every(trajectories, scenario.model.collect.val_every);
    let arch = Architecture::with_hidden(
        rig.xdim(),
        rig.udim(),
        scenario.model.hidden.clone(),
    );
    let params = train(&dataset, arch, &scenario.model.hyper(scenario.seed))?;
    let bound = calibrate_error_bound(&params, &dataset.validation, scenario.dt)?;
    Ok(TrainedModel::new(params, bound, scenario.dt))
}

/// Run every trial of a scenario, training a model first if the
/// controller needs one. Trials run in parallel on the shared worker
/// pool; each returns independently so one failure does not stop the
/// rest.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<TrialOutcome>> {
    run_scenario_with_model(scenario, None)
}

/// Same as [`run_scenario`] but with an optional pre-trained model, so
/// callers running several variants of one scenario (or re-running for a
/// determinism check) can reuse an expensive checkpoint.
pub fn run_scenario_with_model(
    scenario: &Scenario,
    model: Option<&TrainedModel>,
) -> Result<Vec<TrialOutcome>> {
    scenario.validate()?;
    let trained;
    let model = if scenario.controller.uses_planner() {
        let m = match model {
            Some(m) => m,
            None => {
                trained = train_for_scenario(scenario)?;
                &trained
            }
        };
        m.expect_dims(scenario.plant.xdim(), scenario.plant.udim())?;
        if (m.dt - scenario.dt).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "model was trained at dt={}, scenario runs at dt={}",
                m.dt, scenario.dt
            )));
        }
        Some(m)
    } else {
        None
    };
    let outcomes: Vec<TrialOutcome> = worker_pool().install(|| {
        (0..scenario.trials)
            .into_par_iter()
            .map(|trial| {
                let result = run_trial(scenario, model, trial);
                if let Err(e) = &result {
                    log::error!(
                        "scenario '{}' trial {trial} aborted: {e}",
                        scenario.name
                    );
                }
                TrialOutcome {
                    trial,
                    seed: scenario.seed,
                    result,
                }
            })
            .collect()
    });
    Ok(outcomes)
}

/// Wrap an angle to (-π, π].
fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r - std::f64::consts::TAU
    } else {
        r
    }
}

/// Heading error from pose (x, y, ψ) toward the reference target's
/// position dims (0, 1): the turn that would point the robot at the
/// target. Zero when already on target.
fn heading_error_toward(x: &[f64], target: &[f64], heading_dim: usize) -> f64 {
    let dx = target[0] - x[0];
    let dy = target[1] - x[1];
    if dx.hypot(dy) < 1e-9 {
        return 0.0;
    }
    wrap_angle(dy.atan2(dx) - x[heading_dim])
}

fn run_trial(
    scenario: &Scenario,
    model: Option<&TrainedModel>,
    trial: usize,
) -> Result<RunLog> {
    let steps = scenario.steps();
    let root = RngStream::new(scenario.seed).child(TRIAL_BRANCH_BASE + trial as u64);
    let mut plant_stream = root.child(0);
    let planner_root = root.child(1);

    let mut plant = scenario.plant.instantiate();
    let limits = plant.limits();
    let xdim = plant.xdim();
    let dt = scenario.dt;

    let eps = model.map(|m| m.bound.epsilon).unwrap_or(0.0);
    let theta_max = scenario.adaptive.theta_max.unwrap_or(10.0 * eps);
    let mut estimates: Vec<AdaptiveEstimate> = scenario
        .barriers
        .iter()
        .map(|_| AdaptiveEstimate::zeros(xdim, scenario.adaptive.gain, theta_max))
        .collect();

    let mut previous: Option<Vec<ControlVector>> = None;
    let mut pid_state = PidState::new(limits.dim());
    let mut records = Vec::with_capacity(steps);

    for tick in 0..steps {
        let t = tick as f64 * dt;
        let x = plant.state();
        let h: Vec<f64> = scenario
            .barriers
            .iter()
            .map(|b| barrier_value(&b.shape, x.as_slice()))
            .collect();

        let started = Instant::now();
        let record = match scenario.controller {
            Controller::Framework | Controller::NoAcbf => {
                let model = model.expect("planner controllers carry a model");
                let batch = plan_step(
                    model,
                    &x,
                    t,
                    &scenario.task,
                    &scenario.sampler,
                    &limits,
                    previous.as_deref(),
                    &planner_root.child(tick as u64),
                )?;
                let optimal = batch.optimal();
                let (index, margin, intervened, fallback, admissible) =
                    if scenario.controller == Controller::Framework {
                        let decision = filter_select(
                            &batch,
                            optimal,
                            &x,
                            &scenario.barriers,
                            &estimates,
                            eps,
                            scenario.adaptive.metric,
                        )?;
                        (
                            decision.index,
                            Some(decision.margin),
                            decision.intervened,
                            decision.fallback,
                            Some(decision.admissible),
                        )
                    } else {
                        (optimal, None, false, false, None)
                    };
                let sequence = reciprocal_map(&batch, index)?;
                let u = sequence[0].clone();
                let tick_seconds = started.elapsed().as_secs_f64();

                if scenario.controller == Controller::Framework
                    && scenario.adaptive.gain > 0.0
                {
                    // The adaptation law runs exactly once per control
                    // tick, per barrier, with that barrier's gradient at
                    // the observed state.
                    for (est, barrier) in
                        estimates.iter_mut().zip(&scenario.barriers)
                    {
                        let (_, grad) = barrier_eval(&barrier.shape, &x);
                        *est = update_adaptive(est, &grad, dt);
                    }
                }

                plant.step(u.as_slice(), dt, &mut plant_stream);
                previous = Some(sequence);
                RunRecord {
                    t,
                    x: x.to_vec(),
                    u: u.as_slice().to_vec(),
                    h,
                    margin,
                    intervened,
                    fallback,
                    admissible,
                    optimal_cost: Some(batch.costs()[optimal]),
                    coverage_ok: Some(batch.coverage_ok()),
                    tick_seconds,
                }
            }
            Controller::Pid => {
                let target = scenario.task.reference.target_at(t);
                let e = heading_error_toward(x.as_slice(), &target, 2);
                let (u, next) = pid_step(&[e], &scenario.pid, &pid_state, &limits, dt);
                pid_state = next;
                let tick_seconds = started.elapsed().as_secs_f64();
                plant.step(u.as_slice(), dt, &mut plant_stream);
                RunRecord {
                    t,
                    x: x.to_vec(),
                    u: u.as_slice().to_vec(),
                    h,
                    margin: None,
                    intervened: false,
                    fallback: false,
                    admissible: None,
                    optimal_cost: None,
                    coverage_ok: None,
                    tick_seconds,
                }
            }
            Controller::Continuous => {
                let target = scenario.task.reference.target_at(t);
                let e = heading_error_toward(x.as_slice(), &target, 2);
                let stimulus =
                    continuous_stimulation_step(e, scenario.continuous_threshold);
                let command = match stimulus {
                    Stimulus::Left => 1.0,
                    Stimulus::Right => -1.0,
                    Stimulus::None => 0.0,
                };
                let u = ControlVector::new(vec![command], limits.clone());
                let tick_seconds = started.elapsed().as_secs_f64();
                plant.step(u.as_slice(), dt, &mut plant_stream);
                RunRecord {
                    t,
                    x: x.to_vec(),
                    u: u.as_slice().to_vec(),
                    h,
                    margin: None,
                    intervened: false,
                    fallback: false,
                    admissible: None,
                    optimal_cost: None,
                    coverage_ok: None,
                    tick_seconds,
                }
            }
        };
        records.push(record);
    }

    let summary = summarize(
        scenario,
        trial,
        scenario.seed,
        &records,
        plant.stimulation_count(),
    );
    Ok(RunLog {
        scenario: scenario.name.clone(),
        controller: scenario.controller,
        trial,
        seed: scenario.seed,
        records,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets;
    use crate::harness::runlog::scrub_wall_clock;
    use crate::harness::scenario::Controller;
    use crate::types::StateVector;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn heading_error_for_test(x: &StateVector, target: &[f64]) -> f64 {
        heading_error_toward(x.as_slice(), target, 2)
    }

    #[test]
    fn wrap_angle_maps_into_half_open_pi_interval() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.1 - 4.0 * PI) - 0.1).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn heading_error_points_at_the_target() {
        let x = StateVector::new(vec![0.0, 0.0, 0.0, 0.12]);
        assert!((heading_error_for_test(&x, &[0.0, 1.0]) - FRAC_PI_2).abs() < 1e-12);
        assert!((heading_error_for_test(&x, &[1.0, 0.0])).abs() < 1e-12);
        assert!((heading_error_for_test(&x, &[0.0, 0.0])).abs() < 1e-12);
        let turned = StateVector::new(vec![0.0, 0.0, PI, 0.12]);
        assert!((heading_error_for_test(&turned, &[1.0, 0.0]).abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn excitation_collection_counts_and_determinism() {
        let spec = presets::preset("null").unwrap().plant;
        let cfg = CollectConfig {
            trajectories: 5,
            steps: 12,
            ..CollectConfig::default()
        };
        let rng = RngStream::new(9).child(0);
        let a = collect_trajectories(&spec, &cfg, 0.05, &rng);
        let b = collect_trajectories(&spec, &cfg, 0.05, &rng);
        assert_eq!(a.len(), 5);
        for traj in &a {
            assert_eq!(traj.states().len(), 13);
            assert_eq!(traj.controls().len(), 12);
        }
        assert_eq!(a, b, "collection must be deterministic in the stream");
    }

    #[test]
    fn excitation_respects_control_limits() {
        let scenario = presets::preset("null").unwrap();
        let cfg = CollectConfig {
            trajectories: 3,
            steps: 50,
            excitation_scale: 2.0,
            ..CollectConfig::default()
        };
        let rng = RngStream::new(3).child(0);
        let limits = scenario.plant.limits();
        for traj in collect_trajectories(&scenario.plant, &cfg, 0.05, &rng) {
            for u in traj.controls() {
                assert!(limits.contains(u.as_slice()));
            }
        }
    }

    /// The trivial end-to-end fixture: motionless plant, zero reference,
    /// far-away barrier. The whole loop must be a fixed point at the
    /// origin with no interventions.
    #[test]
    fn null_scenario_stays_at_origin_without_interventions() {
        let scenario = presets::preset("null").unwrap();
        let outcomes = run_scenario(&scenario).unwrap();
        assert_eq!(outcomes.len(), scenario.trials);
        for outcome in outcomes {
            let log = outcome.result.expect("null scenario trials must succeed");
            assert_eq!(log.records.len(), scenario.steps());
            for record in &log.records {
                assert_eq!(record.x, vec![0.0, 0.0], "plant never moves");
                assert!(!record.intervened);
                assert!(record.h.iter().all(|&h| h > 0.0));
            }
            assert_eq!(log.summary.interventions, 0);
            assert_eq!(log.summary.mean_tracking_distance, 0.0);
            let h_min = log.summary.min_h[0];
            assert!(h_min > 0.0, "barrier stays positive, got {h_min}");
        }
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let scenario = presets::preset("null").unwrap();
        let model = train_for_scenario(&scenario).unwrap();
        let run = |m| {
            run_scenario_with_model(&scenario, Some(m))
                .unwrap()
                .into_iter()
                .map(|o| {
                    let mut log = o.result.unwrap();
                    scrub_wall_clock(&mut log);
                    log
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(&model), run(&model));
    }

    #[test]
    fn summary_is_recomputable_from_records() {
        let scenario = presets::preset("null").unwrap();
        let outcomes = run_scenario(&scenario).unwrap();
        for outcome in outcomes {
            let log = outcome.result.unwrap();
            let recomputed = summarize(
                &scenario,
                log.trial,
                log.seed,
                &log.records,
                log.summary.stimulation_count,
            );
            assert_eq!(recomputed, log.summary);
        }
    }

    #[test]
    fn trial_streams_are_independent_of_execution_order() {
        // Running a two-trial scenario must give the same per-trial logs
        // as running two single-trial scenarios would: trial 1 cannot
        // depend on trial 0 having run.
        let mut scenario = presets::preset("null").unwrap();
        scenario.trials = 2;
        let model = train_for_scenario(&scenario).unwrap();
        let both = run_scenario_with_model(&scenario, Some(&model)).unwrap();
        let logs: Vec<RunLog> = both
            .into_iter()
            .map(|o| {
                let mut log = o.result.unwrap();
                scrub_wall_clock(&mut log);
                log
            })
            .collect();
        assert_eq!(logs[0].records.len(), logs[1].records.len());
        assert_eq!(logs[0].trial, 0);
        assert_eq!(logs[1].trial, 1);
    }

    #[test]
    fn mismatched_checkpoint_dt_is_rejected() {
        let scenario = presets::preset("null").unwrap();
        let mut model = train_for_scenario(&scenario).unwrap();
        model.dt *= 2.0;
        let err = run_scenario_with_model(&scenario, Some(&model)).unwrap_err();
        assert!(err.to_string().contains("dt"), "{err}");
    }

    #[test]
    fn pid_controller_rejects_plants_without_heading() {
        let scenario = presets::preset("null")
            .unwrap()
            .with_controller(Controller::Pid);
        assert!(run_scenario(&scenario).is_err());
    }
}
