//! Built-in scenario definitions.
//!
//! Each preset encodes one experiment at desk scale. Geometry constants
//! live here (not in the runner) so a scenario is fully described by its
//! serialized form; the CLI accepts either a preset name or a TOML file.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::harness::baselines::PidGains;
use crate::harness::scenario::{
    AdaptiveConfig, CollectConfig, Controller, ModelConfig, Scenario,
};
use crate::planner::{NominalPolicy, Reference, SamplerConfig, TaskSpec};
use crate::plants::{
    apply_fatigue, ArmParams, ArmPlant, CyborgParams, CyborgPlant, FishParams, FishPlant,
    NullPlant, PlantSpec,
};
use crate::safety::{Barrier, BarrierShape};

/// Hard clearance the swimmer must keep from obstacle surfaces (m). The
/// obstacle barriers are inflated by this amount, so maintaining h ≥ 0
/// keeps the true surface distance above the threshold.
pub const FISH_OBSTACLE_CLEARANCE: f64 = 0.10;
/// Physical radius of the swimmer-scenario obstacles (m).
pub const FISH_OBSTACLE_RADIUS: f64 = 0.05;
/// Extra slack added to the barrier radius beyond the hard clearance (m).
pub const FISH_OBSTACLE_SLACK: f64 = 0.005;
/// Corridor half-width for the walker scenario (m).
pub const CYBORG_CORRIDOR_HALF_WIDTH: f64 = 0.05;
/// Actuation cycles applied before the fatigue scenario starts.
pub const ARM_FATIGUE_CYCLES: u64 = 3000;
/// Peak speed of the moving-target reference (m/s).
pub const MOVING_TARGET_TOP_SPEED: f64 = 0.32;
/// Seconds over which the moving target ramps up to peak speed.
pub const MOVING_TARGET_RAMP_SECONDS: f64 = 20.0;
/// Acceptance bound on the mean tracking distance of the moving-target
/// scenario (m).
pub const MOVING_TARGET_DISTANCE_THRESHOLD: f64 = 0.25;

pub fn preset_names() -> &'static [&'static str] {
    &[
        "null",
        "arm-square",
        "arm-obstacle",
        "arm-fatigue",
        "fish-two-obstacles",
        "fish-tight-turn",
        "fish-moving-target",
        "cyborg-corridor",
    ]
}

/// Look up a built-in scenario by name.
pub fn preset(name: &str) -> Option<Scenario> {
    match name {
        "null" => Some(null_scenario()),
        "arm-square" => Some(arm_square()),
        "arm-obstacle" => Some(arm_obstacle()),
        "arm-fatigue" => Some(arm_fatigue()),
        "fish-two-obstacles" => Some(fish_two_obstacles()),
        "fish-tight-turn" => Some(fish_tight_turn()),
        "fish-moving-target" => Some(fish_moving_target()),
        "cyborg-corridor" => Some(cyborg_corridor()),
        _ => None,
    }
}

fn sampler(n: usize, horizon: usize, stddev: Vec<f64>) -> SamplerConfig {
    SamplerConfig {
        n,
        horizon,
        beta: 1.0,
        stddev,
        nominal: NominalPolicy::ShiftPrevious,
    }
}

/// Pad a planar arm tip position to the full 6-dim state (z at the rest
/// height, zero velocity targets).
fn arm_point(x: f64, y: f64) -> Vec<f64> {
    vec![x, y, 0.3, 0.0, 0.0, 0.0]
}

fn fish_point(x: f64, y: f64) -> Vec<f64> {
    vec![x, y, 0.0, 0.0]
}

/// Degenerate end-to-end fixture: motionless plant, zero reference, one
/// far-away obstacle. The closed loop must be a fixed point.
fn null_scenario() -> Scenario {
    let mut task = TaskSpec::tracking(Reference::Waypoint { target: vec![0.0, 0.0] }, vec![1.0, 1.0]);
    task.input_weight = 0.1;
    Scenario {
        name: "null".into(),
        plant: PlantSpec::Null(NullPlant::default()),
        task,
        barriers: vec![Barrier::new(BarrierShape::Obstacle {
            dims: vec![0, 1],
            center: vec![1.0, 1.0],
            radius: 0.2,
        })],
        duration: 2.0,
        dt: 0.05,
        controller: Controller::Framework,
        seed: 7,
        trials: 2,
        sampler: sampler(32, 8, vec![0.3]),
        adaptive: AdaptiveConfig::default(),
        model: ModelConfig {
            hidden: vec![],
            epochs: 300,
            learn_rate: 0.01,
            batch_size: 64,
            window: 4,
            stride: 2,
            collect: CollectConfig {
                trajectories: 6,
                steps: 40,
                excitation_tau: 0.4,
                excitation_scale: 1.0,
                val_every: 3,
                plant: None,
            },
        },
        pid: PidGains::default(),
        continuous_threshold: 0.05,
        tsf_scale: 1.0,
    }
}

/// The arm is a linear spring–damper, so the derivative network needs no
/// hidden layers; a linear map drives the validation residual (and with
/// it the pessimism of the safety margins) orders of magnitude below what
/// a generic two-layer network reaches in comparable training time.
fn arm_model() -> ModelConfig {
    ModelConfig {
        hidden: vec![],
        epochs: 800,
        learn_rate: 0.05,
        batch_size: 64,
        window: 3,
        stride: 1,
        collect: CollectConfig {
            trajectories: 24,
            steps: 160,
            excitation_tau: 0.4,
            excitation_scale: 1.0,
            val_every: 4,
            plant: None,
        },
    }
}

fn arm_track_weights() -> Vec<f64> {
    vec![40.0, 40.0, 40.0, 0.0, 0.0, 0.0]
}

/// The allowed tracking band of the arm scenarios: a planar box leaving
/// at least 0.10 m of margin around the commanded positions. `hi_x` lets
/// the reach scenario extend the band past its farther target.
fn arm_band(hi_x: f64) -> Barrier {
    Barrier {
        shape: BarrierShape::Box {
            dims: vec![0, 1],
            lo: vec![-0.25, -0.25],
            hi: vec![hi_x, 0.25],
        },
        // Permissive class-K gain: the tip brakes at ~20 m/s², so any
        // approach speed below α·h stops well inside the band; smaller
        // gains reject routine tracking transients far from the walls.
        alpha: 10.0,
    }
}

/// Square tracking: the tip traces a 0.3 m square at 0.1 m/s inside a
/// ±0.25 m band.
fn arm_square() -> Scenario {
    let times = vec![0.0, 2.0, 5.0, 8.0, 11.0, 14.0];
    let points = vec![
        arm_point(0.0, 0.0),
        arm_point(0.15, 0.15),
        arm_point(0.15, -0.15),
        arm_point(-0.15, -0.15),
        arm_point(-0.15, 0.15),
        arm_point(0.15, 0.15),
    ];
    let mut task = TaskSpec::tracking(Reference::Path { times, points }, arm_track_weights());
    task.input_weight = 0.05;
    task.rate_weight = 0.2;
    Scenario {
        name: "arm-square".into(),
        plant: PlantSpec::Arm(ArmPlant::at_rest(ArmParams::default())),
        task,
        barriers: vec![arm_band(0.25)],
        duration: 14.0,
        dt: 0.05,
        controller: Controller::Framework,
        seed: 11,
        trials: 10,
        sampler: sampler(256, 20, vec![0.12; 4]),
        adaptive: AdaptiveConfig::default(),
        model: arm_model(),
        pid: PidGains::default(),
        continuous_threshold: 0.05,
        // Report scale mapping the 0.25 m band half-width to a 0–10 score.
        tsf_scale: 40.0,
    }
}

/// Straight reach with a ball obstacle directly on the commanded path:
/// tracking must be transiently relaxed to keep clear.
fn arm_obstacle() -> Scenario {
    let obstacle = BarrierShape::Obstacle {
        dims: vec![0, 1, 2],
        center: vec![0.11, 0.0, 0.3],
        radius: 0.045,
    };
    let times = vec![0.0, 5.0, 12.0];
    let points = vec![
        arm_point(0.0, 0.0),
        arm_point(0.24, 0.0),
        arm_point(0.24, 0.0),
    ];
    let mut task = TaskSpec::tracking(Reference::Path { times, points }, arm_track_weights());
    task.input_weight = 0.05;
    task.rate_weight = 0.2;
    // The hinge lives in h = d² − r² units (≈ 1e-2 scale here), so the
    // weight must be large to outweigh metre-scale tracking costs, and
    // the activation threshold small enough that the hold target at
    // h ≈ 0.015 sits outside the penalised shell.
    task.obstacle_weight = 20000.0;
    task.obstacle_soft_margin = 0.015;
    task.penalty_barriers = vec![obstacle.clone()];
    Scenario {
        name: "arm-obstacle".into(),
        plant: PlantSpec::Arm(ArmPlant::at_rest(ArmParams::default())),
        task,
        barriers: vec![
            Barrier {
                shape: obstacle,
                // h = d² − r² is centimetre-scale near the ball; this gain
                // admits slow tangential passes but brakes the faster
                // transit approaches, which is where interventions arise.
                alpha: 8.0,
            },
            arm_band(0.35),
        ],
        duration: 12.0,
        dt: 0.05,
        controller: Controller::Framework,
        seed: 13,
        trials: 10,
        sampler: sampler(256, 20, vec![0.12; 4]),
        adaptive: AdaptiveConfig::default(),
        model: arm_model(),
        pid: PidGains::default(),
        continuous_threshold: 0.05,
        tsf_scale: 40.0,
    }
}

/// Hold a commanded pose inside a safe-region box with a
/// stiffness-degraded arm while the model was identified on a fresh one.
/// The stale model believes a modest tendon command keeps the tip at the
/// pose, but the weakened arm's true equilibrium for that command sags
/// well short, drifting the tip out through the floor of the box unless
/// the filter notices and holds it back.
fn arm_fatigue() -> Scenario {
    let target = 0.24;
    let band = BarrierShape::Box {
        dims: vec![0, 1],
        lo: vec![0.15, -0.25],
        hi: vec![0.35, 0.25],
    };
    let mut task = TaskSpec::tracking(
        Reference::Waypoint {
            target: arm_point(target, 0.0),
        },
        arm_track_weights(),
    );
    task.input_weight = 0.05;
    task.rate_weight = 0.2;
    let fresh = ArmPlant::at_rest(ArmParams::default());
    let mut worn = apply_fatigue(&fresh, ARM_FATIGUE_CYCLES);
    // The trial starts with the pose already acquired; the question is
    // whether the controller can keep it on degraded hardware.
    worn.tip = [target, 0.0, worn.params.rest[2]];
    let mut model = arm_model();
    // Identify on the fresh arm; deploy on the worn one.
    model.collect.plant = Some(PlantSpec::Arm(fresh));
    Scenario {
        name: "arm-fatigue".into(),
        plant: PlantSpec::Arm(worn),
        task,
        barriers: vec![Barrier {
            shape: band,
            alpha: 10.0,
        }],
        duration: 8.0,
        dt: 0.05,
        controller: Controller::Framework,
        seed: 17,
        trials: 6,
        // Wide exploration: the substituted candidates must carry enough
        // tendon authority to counteract the sag toward the rest pose.
        sampler: sampler(256, 20, vec![0.28; 4]),
        adaptive: AdaptiveConfig {
            gain: 2.0,
            // On the box barrier the gradient has unit norm, so this caps
            // the learned tightening at five millimetres' worth of margin;
            // the residual-derived default is far too small to matter.
            theta_max: Some(0.05),
            metric: Default::default(),
        },
        model,
        pid: PidGains::default(),
        continuous_threshold: 0.05,
        tsf_scale: 40.0,
    }
}

fn fish_model() -> ModelConfig {
    ModelConfig {
        hidden: vec![64, 64],
        epochs: 100,
        learn_rate: 0.01,
        batch_size: 64,
        window: 10,
        stride: 5,
        collect: CollectConfig {
            trajectories: 30,
            steps: 280,
            excitation_tau: 0.5,
            excitation_scale: 1.0,
            val_every: 4,
            plant: None,
        },
    }
}

/// Inflated obstacle barrier: keeping h ≥ 0 keeps the swimmer at least
/// `FISH_OBSTACLE_CLEARANCE` (plus slack) from the physical surface.
fn fish_obstacle_barrier(cx: f64, cy: f64) -> Barrier {
    Barrier {
        shape: BarrierShape::Obstacle {
            dims: vec![0, 1],
            center: vec![cx, cy],
            radius: FISH_OBSTACLE_RADIUS + FISH_OBSTACLE_CLEARANCE + FISH_OBSTACLE_SLACK,
        },
        alpha: 2.0,
    }
}

/// Figure-eight around two obstacles: a Gerono lemniscate whose loops
/// enclose the obstacle centers, sampled at 1 s spacing.
fn fish_two_obstacles() -> Scenario {
    let (a, b) = (0.58, 0.35);
    let duration = 40.0;
    let samples = 40usize;
    let mut times = Vec::with_capacity(samples + 1);
    let mut points = Vec::with_capacity(samples + 1);
    for k in 0..=samples {
        let t = duration * k as f64 / samples as f64;
        let phi = TAU * k as f64 / samples as f64;
        times.push(t);
        points.push(fish_point(a * phi.sin(), b * phi.sin() * phi.cos()));
    }
    let barriers = vec![
        fish_obstacle_barrier(0.39, 0.0),
        fish_obstacle_barrier(-0.39, 0.0),
    ];
    let mut task = TaskSpec::tracking(Reference::Path { times, points }, vec![30.0, 30.0, 0.0, 0.0]);
    task.input_weight = 0.4;
    task.rate_weight = 0.5;
    task.obstacle_weight = 25.0;
    task.obstacle_soft_margin = 0.04;
    task.penalty_barriers = barriers.iter().map(|b| b.shape.clone()).collect();
    Scenario {
        name: "fish-two-obstacles".into(),
        plant: PlantSpec::Fish(FishPlant::cruising(FishParams::default(), 0.0, 0.0, 0.0)),
        task,
        barriers,
        duration,
        dt: 0.05,
        controller: Controller::Framework,
        seed: 23,
        trials: 10,
        sampler: sampler(256, 20, vec![0.35]),
        adaptive: AdaptiveConfig::default(),
        model: fish_model(),
        pid: PidGains::default(),
        continuous_threshold: 0.05,
        tsf_scale: 1.0,
    }
}

/// Tight U-turn inside a walled region. The reference rounds a 0.08 m
/// arc, below the swimmer's 0.10 m minimum turning radius at full bias
/// (cruise speed 0.12 m/s over k_turn·b_max = 1.2 rad/s), so no
/// controller can track it exactly; the walls leave 0.05 m beyond the
/// reference. The framework cuts the corner inside the region, while the
/// saturated PID overshoots through the far wall.
fn fish_tight_turn() -> Scenario {
    let cruise = 0.12;
    let turn_radius = 0.08;
    let arc_center = (0.6, turn_radius);
    let leg = 0.6;
    let leg_time = leg / cruise;
    let arc_time = PI * turn_radius / cruise; // ≈ 2.094 s
    let mut times = vec![0.0];
    let mut points = vec![fish_point(0.0, 0.0)];
    let arc_samples = 12usize;
    for k in 0..=arc_samples {
        let phi = -FRAC_PI_2 + PI * k as f64 / arc_samples as f64;
        times.push(leg_time + arc_time * k as f64 / arc_samples as f64);
        points.push(fish_point(
            arc_center.0 + turn_radius * phi.cos(),
            arc_center.1 + turn_radius * phi.sin(),
        ));
    }
    let t_back = leg_time + arc_time;
    times.push(t_back + leg_time);
    points.push(fish_point(0.0, 2.0 * turn_radius));
    let duration = 12.1; // 242 ticks; the path ends at ≈ 12.094 s
    let mut task = TaskSpec::tracking(Reference::Path { times, points }, vec![30.0, 30.0, 0.0, 0.0]);
    task.input_weight = 0.3;
    task.rate_weight = 0.4;
    Scenario {
        name: "fish-tight-turn".into(),
        plant: PlantSpec::Fish(FishPlant::cruising(FishParams::default(), 0.0, 0.0, 0.0)),
        task,
        // Walls 0.05 m beyond the reference on every side of the turn.
        barriers: vec![Barrier {
            shape: BarrierShape::Box {
                dims: vec![0, 1],
                lo: vec![-0.15, -CYBORG_CORRIDOR_HALF_WIDTH],
                hi: vec![
                    0.6 + turn_radius + CYBORG_CORRIDOR_HALF_WIDTH,
                    2.0 * turn_radius + CYBORG_CORRIDOR_HALF_WIDTH,
                ],
            },
            alpha: 6.0,
        }],
        duration,
        dt: 0.05,
        controller: Controller::Framework,
        seed: 29,
        trials: 4,
        sampler: sampler(256, 20, vec![0.35]),
        adaptive: AdaptiveConfig::default(),
        model: fish_model(),
        pid: PidGains::default(),
        continuous_threshold: 0.05,
        tsf_scale: 1.0,
    }
}

/// Figure-eight moving target whose speed ramps to the peak over the
/// first `MOVING_TARGET_RAMP_SECONDS`, then holds for the rest of the
/// 60 s trial. Uses a faster swimmer (higher cruise gain) so the peak
/// speed stays within reach.
fn fish_moving_target() -> Scenario {
    let (a, b) = (0.7, 0.45);
    let duration: f64 = 60.0;
    let step: f64 = 0.05;
    // March the lemniscate phase so the target's path speed follows the
    // ramp exactly: dφ = v(t)/|p'(φ)| dt.
    let mut times = Vec::new();
    let mut points = Vec::new();
    let mut phi: f64 = 0.0;
    let samples_per_point = 5; // record every 0.25 s
    let steps = (duration / step).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * step;
        if k % samples_per_point == 0 {
            times.push(t);
            points.push(fish_point(a * phi.sin(), b * phi.sin() * phi.cos()));
        }
        let v = MOVING_TARGET_TOP_SPEED * (t / MOVING_TARGET_RAMP_SECONDS).min(1.0);
        let speed_of_phi = (a * phi.cos()).hypot(b * (2.0 * phi).cos());
        phi += v / speed_of_phi * step;
    }
    let mut params = FishParams::default();
    params.cruise_gain = 0.8; // cruise speed 0.4 m/s > target peak 0.32
    let start_heading = (b / a).atan(); // lemniscate tangent at the origin
    let mut task = TaskSpec::tracking(Reference::Path { times, points }, vec![30.0, 30.0, 0.0, 0.0]);
    task.input_weight = 0.2;
    task.rate_weight = 0.3;
    let mut model = fish_model();
    model.collect.steps = 160;
    model.collect.trajectories = 36;
    Scenario {
        name: "fish-moving-target".into(),
        plant: PlantSpec::Fish(FishPlant::cruising(params, 0.0, 0.0, start_heading)),
        task,
        barriers: vec![],
        duration,
        dt: step,
        controller: Controller::Framework,
        seed: 31,
        trials: 3,
        sampler: sampler(256, 20, vec![0.35]),
        adaptive: AdaptiveConfig::default(),
        model,
        pid: PidGains::default(),
        continuous_threshold: 0.05,
        tsf_scale: 1.0,
    }
}

/// Walker in a ±0.05 m corridor with heading drift and habituation: the
/// reference ambles down the centerline at walking speed, and stimulation
/// is priced so the planner only corrects when drifting out.
fn cyborg_corridor() -> Scenario {
    let mut params = CyborgParams::default();
    params.heading_noise = 0.08;
    let mut task = TaskSpec::tracking(
        Reference::Moving {
            start: vec![0.0, 0.0, 0.0],
            velocity: vec![params.speed, 0.0, 0.0],
        },
        vec![6.0, 120.0, 0.0],
    );
    task.input_weight = 1.2;
    Scenario {
        name: "cyborg-corridor".into(),
        plant: PlantSpec::Cyborg(CyborgPlant::at_pose(params, 0.0, 0.0, 0.0)),
        task,
        barriers: vec![Barrier {
            shape: BarrierShape::Corridor {
                dim: 1,
                center: 0.0,
                half_width: CYBORG_CORRIDOR_HALF_WIDTH,
            },
            alpha: 120.0,
        }],
        duration: 30.0,
        dt: 0.05,
        controller: Controller::Framework,
        seed: 37,
        trials: 8,
        sampler: sampler(128, 15, vec![0.6]),
        adaptive: AdaptiveConfig::default(),
        model: ModelConfig {
            hidden: vec![64, 64],
            epochs: 120,
            learn_rate: 0.01,
            batch_size: 64,
            window: 8,
            stride: 3,
            collect: CollectConfig {
                trajectories: 40,
                steps: 50,
                excitation_tau: 0.25,
                excitation_scale: 1.0,
                val_every: 4,
                plant: None,
            },
        },
        pid: PidGains::default(),
        continuous_threshold: 0.05,
        tsf_scale: 1.0,
    }
}
