//! Scenario configuration: everything needed to reproduce one experiment.
//!
//! A `Scenario` is a plain data value (serializable to/from strict TOML)
//! bundling the plant, the task, the barriers, the controller variant, and
//! all tuning knobs. Unknown keys are rejected at parse time so a typo in a
//! config file fails loudly instead of silently using a default.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::baselines::PidGains;
use crate::model::TrainHyper;
use crate::planner::SamplerConfig;
use crate::plants::PlantSpec;
use crate::safety::{Barrier, BarrierShape, DistanceMetric};
use crate::planner::TaskSpec;

/// Which control stack closes the loop for a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    /// Sampling planner + adaptive safety filter (the full stack).
    #[default]
    Framework,
    /// Sampling planner with the safety filter removed entirely: the
    /// cost-optimal candidate is executed unfiltered and no adaptation
    /// runs. Ablation used to show what the filter buys.
    NoAcbf,
    /// Saturated PID pursuing the instantaneous reference point (heading
    /// error → tail bias). Only defined for the swimmer plant.
    Pid,
    /// Threshold policy stimulating every tick the heading error is large,
    /// regardless of habituation. Only defined for the walker plant.
    Continuous,
}

impl Controller {
    pub fn as_str(&self) -> &'static str {
        match self {
            Controller::Framework => "framework",
            Controller::NoAcbf => "no-acbf",
            Controller::Pid => "pid",
            Controller::Continuous => "continuous",
        }
    }

    /// True for the variants that require a trained model and the planner.
    pub fn uses_planner(&self) -> bool {
        matches!(self, Controller::Framework | Controller::NoAcbf)
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Controller {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "framework" => Ok(Controller::Framework),
            "no-acbf" => Ok(Controller::NoAcbf),
            "pid" => Ok(Controller::Pid),
            "continuous" => Ok(Controller::Continuous),
            other => Err(Error::Config(format!(
                "unknown controller '{other}' (expected framework|no-acbf|pid|continuous)"
            ))),
        }
    }
}

/// Excitation-data collection settings for system identification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    /// Number of excitation trajectories.
    pub trajectories: usize,
    /// Steps per trajectory (so each holds steps+1 states).
    pub steps: usize,
    /// Time constant (s) of the low-pass filter shaping the random
    /// excitation: larger values give smoother, slower input wandering.
    pub excitation_tau: f64,
    /// Stationary excitation amplitude as a fraction of the control
    /// half-range. Values < 0.5 on a pulsed plant keep the excitation
    /// inside the no-stimulation dead band.
    pub excitation_scale: f64,
    /// Every val_every-th trajectory goes to the validation split.
    pub val_every: usize,
    /// Plant used on the identification rig, when it differs from the
    /// deployment plant (e.g. identify a fresh arm, deploy a fatigued
    /// one). Defaults to the scenario plant.
    pub plant: Option<PlantSpec>,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            trajectories: 24,
            steps: 160,
            excitation_tau: 0.4,
            excitation_scale: 1.0,
            val_every: 4,
            plant: None,
        }
    }
}

/// Model architecture and training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden-layer widths of the derivative network (empty = linear).
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learn_rate: f64,
    pub batch_size: usize,
    /// Unroll window length (steps) of the trajectory-level loss.
    pub window: usize,
    /// Stride between window starts.
    pub stride: usize,
    pub collect: CollectConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            epochs: 80,
            learn_rate: 0.01,
            batch_size: 64,
            window: 10,
            stride: 5,
            collect: CollectConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            epochs: self.epochs,
            learn_rate: self.learn_rate,
            batch_size: self.batch_size,
            seed,
            window: self.window,
            stride: self.stride,
        }
    }
}

/// Adaptive safety-filter settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    /// Adaptation gain Γ (0 freezes the estimates).
    pub gain: f64,
    /// Projection bound on ‖θ̂‖. None uses 10 × the calibrated error
    /// bound, tying the allowed disturbance estimate to model quality.
    pub theta_max: Option<f64>,
    /// Distance metric for nearest-admissible substitution.
    pub metric: DistanceMetric,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            gain: 1.0,
            theta_max: None,
            metric: DistanceMetric::default(),
        }
    }
}

fn default_trials() -> usize {
    1
}

fn default_continuous_threshold() -> f64 {
    0.05
}

fn default_tsf_scale() -> f64 {
    1.0
}

/// One complete experiment definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Short identifier used in output file names.
    pub name: String,
    /// Initial plant value, cloned fresh for every trial.
    pub plant: PlantSpec,
    /// Tracking task handed to the planner.
    pub task: TaskSpec,
    /// Barriers the safety filter enforces (and the metrics report on).
    #[serde(default)]
    pub barriers: Vec<Barrier>,
    /// Trial length in seconds; must be an integer number of `dt` steps.
    pub duration: f64,
    /// Control period (s), shared by planner, model, and plants.
    pub dt: f64,
    #[serde(default)]
    pub controller: Controller,
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Gains for the PID baseline (ignored by other controllers).
    #[serde(default)]
    pub pid: PidGains,
    /// Heading-error dead band (rad) of the continuous-stimulation
    /// baseline.
    #[serde(default = "default_continuous_threshold")]
    pub continuous_threshold: f64,
    /// Report scale applied to the tracking-safety metric.
    #[serde(default = "default_tsf_scale")]
    pub tsf_scale: f64,
}

fn shape_dims(shape: &BarrierShape) -> Vec<usize> {
    match shape {
        BarrierShape::Obstacle { dims, .. } | BarrierShape::Box { dims, .. } => dims.clone(),
        BarrierShape::Corridor { dim, .. } | BarrierShape::RegionBand { dim, .. } => {
            vec![*dim]
        }
    }
}

impl Scenario {
    /// Number of control ticks in one trial.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Convenience: same scenario under a different controller.
    pub fn with_controller(mut self, controller: Controller) -> Self {
        self.controller = controller;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("scenario name must not be empty".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!(
                "duration must be > 0, got {}",
                self.duration
            )));
        }
        let ratio = self.duration / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "duration {} is not an integer number of dt={} steps",
                self.duration, self.dt
            )));
        }
        if self.trials < 1 {
            return Err(Error::Config("trial count must be ≥ 1".into()));
        }
        let xdim = self.plant.xdim();
        let udim = self.plant.udim();
        self.task.validate(xdim)?;
        self.sampler.validate()?;
        if self.sampler.stddev.len() != udim {
            return Err(Error::Config(format!(
                "sampler stddev has {} entries for a {udim}-input plant",
                self.sampler.stddev.len()
            )));
        }
        for (i, barrier) in self.barriers.iter().enumerate() {
            if !(barrier.alpha > 0.0 && barrier.alpha.is_finite()) {
                return Err(Error::Config(format!(
                    "barrier {i}: alpha must be > 0, got {}",
                    barrier.alpha
                )));
            }
            for d in shape_dims(&barrier.shape) {
                if d >= xdim {
                    return Err(Error::Config(format!(
                        "barrier {i} references state dim {d}, but the plant has {xdim}"
                    )));
                }
            }
        }
        if !(self.adaptive.gain >= 0.0 && self.adaptive.gain.is_finite()) {
            return Err(Error::Config(format!(
                "adaptation gain must be ≥ 0, got {}",
                self.adaptive.gain
            )));
        }
        if let Some(tm) = self.adaptive.theta_max {
            if !(tm >= 0.0 && tm.is_finite()) {
                return Err(Error::Config(format!(
                    "theta_max must be ≥ 0, got {tm}"
                )));
            }
        }
        self.pid.validate()?;
        if !(self.continuous_threshold >= 0.0) {
            return Err(Error::Config(
                "continuous-stimulation threshold must be ≥ 0".into(),
            ));
        }
        if !(self.tsf_scale > 0.0 && self.tsf_scale.is_finite()) {
            return Err(Error::Config("tsf_scale must be > 0".into()));
        }
        match self.controller {
            Controller::Pid => {
                if !matches!(self.plant, PlantSpec::Fish(_)) {
                    return Err(Error::Config(
                        "the PID baseline is defined for the swimmer plant only".into(),
                    ));
                }
            }
            Controller::Continuous => {
                if !matches!(self.plant, PlantSpec::Cyborg(_)) {
                    return Err(Error::Config(
                        "continuous stimulation is defined for the walker plant only".into(),
                    ));
                }
            }
            Controller::Framework | Controller::NoAcbf => {}
        }
        let c = &self.model.collect;
        if self.controller.uses_planner() {
            if c.trajectories < 2 {
                return Err(Error::Config(
                    "need at least 2 excitation trajectories (train + validation)".into(),
                ));
            }
            if c.steps < self.model.window + 1 {
                return Err(Error::Config(format!(
                    "excitation trajectories of {} steps are shorter than the {}-step training window",
                    c.steps, self.model.window
                )));
            }
        }
        if c.val_every < 2 {
            return Err(Error::Config("collect.val_every must be ≥ 2".into()));
        }
        if !(c.excitation_tau > 0.0 && c.excitation_tau.is_finite()) {
            return Err(Error::Config("collect.excitation_tau must be > 0".into()));
        }
        if !(c.excitation_scale > 0.0 && c.excitation_scale.is_finite()) {
            return Err(Error::Config("collect.excitation_scale must be > 0".into()));
        }
        if let Some(rig) = &c.plant {
            if rig.xdim() != xdim || rig.udim() != udim {
                return Err(Error::Config(
                    "identification-rig plant dimensions differ from the deployment plant".into(),
                ));
            }
        }
        Ok(())
    }

    /// Parse from strict TOML: unknown keys are an error naming the key.
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario config: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("scenario serialization: {e}")))
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}
