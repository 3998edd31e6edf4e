//! Ground-truth simulated plants.
//!
//! Three low-dimensional surrogates stand in for hardware: a tendon-driven
//! arm modeled as a damped spring toward an input-dependent attractor, a
//! swimming robot and a stimulated walker both built on unicycle
//! kinematics. They are deliberately phenomenological — the control stack
//! under test claims morphology independence, so plant fidelity is not the
//! object. Slow effects the safety filter must absorb are included:
//! stiffness fatigue on the arm and stimulus habituation on the walker.
//!
//! Plants are values: stepping mutates a cloned instance per trial, never a
//! shared one. With all noise parameters zero, stepping is deterministic.

mod arm;
mod cyborg;
mod fish;

pub use arm::{apply_fatigue, arm_step, ArmParams, ArmPlant, FATIGUE_LOSS, FATIGUE_SATURATION_CYCLES};
pub use cyborg::{cyborg_step, CyborgParams, CyborgPlant};
pub use fish::{fish_step, FishParams, FishPlant};

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::types::{ControlLimits, StateVector};

/// Discrete stimulation command for the walker plant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stimulus {
    None,
    Left,
    Right,
}

/// Quantizes a continuous command in [-1, 1] to a stimulus: the middle band
/// |u| ≤ 0.5 is no stimulation, outside it the sign picks the side
/// (positive turns left). This is the shared convention between the
/// planner's continuous action space and the walker's pulsed interface.
pub fn stimulus_from_control(u: f64) -> Stimulus {
    if u > 0.5 {
        Stimulus::Left
    } else if u < -0.5 {
        Stimulus::Right
    } else {
        Stimulus::None
    }
}

/// Uniform stepping interface over the plant zoo.
///
/// `step` consumes the continuous control representation used by the
/// planner; plants with discrete actuation quantize internally.
pub trait Plant {
    /// Canonical state exposed to the model and planner.
    fn state(&self) -> StateVector;
    fn xdim(&self) -> usize;
    fn udim(&self) -> usize;
    fn limits(&self) -> ControlLimits;
    /// Advance one control period of length `dt`.
    fn step(&mut self, u: &[f64], dt: f64, rng: &mut RngStream);
    /// Count of discrete stimulation events delivered so far, if the plant
    /// has a pulsed interface.
    fn stimulation_count(&self) -> Option<u64> {
        None
    }
}

/// Motionless two-dimensional plant: ignores input, never moves. Used for
/// degenerate end-to-end checks where the whole loop must be a fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullPlant {
    pub x: f64,
    pub y: f64,
}

impl Default for NullPlant {
    fn default() -> Self {
        NullPlant { x: 0.0, y: 0.0 }
    }
}

impl Plant for NullPlant {
    fn state(&self) -> StateVector {
        StateVector::new(vec![self.x, self.y])
    }
    fn xdim(&self) -> usize {
        2
    }
    fn udim(&self) -> usize {
        1
    }
    fn limits(&self) -> ControlLimits {
        ControlLimits::symmetric(1, 1.0)
    }
    fn step(&mut self, _u: &[f64], _dt: f64, _rng: &mut RngStream) {}
}

/// Initial plant value selected by a scenario; cloned once per trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantSpec {
    Arm(ArmPlant),
    Fish(FishPlant),
    Cyborg(CyborgPlant),
    Null(NullPlant),
}

impl PlantSpec {
    pub fn instantiate(&self) -> Box<dyn Plant> {
        match self {
            PlantSpec::Arm(p) => Box::new(p.clone()),
            PlantSpec::Fish(p) => Box::new(p.clone()),
            PlantSpec::Cyborg(p) => Box::new(p.clone()),
            PlantSpec::Null(p) => Box::new(p.clone()),
        }
    }

    pub fn xdim(&self) -> usize {
        match self {
            PlantSpec::Arm(p) => p.xdim(),
            PlantSpec::Fish(p) => p.xdim(),
            PlantSpec::Cyborg(p) => p.xdim(),
            PlantSpec::Null(p) => p.xdim(),
        }
    }

    pub fn udim(&self) -> usize {
        match self {
            PlantSpec::Arm(p) => p.udim(),
            PlantSpec::Fish(p) => p.udim(),
            PlantSpec::Cyborg(p) => p.udim(),
            PlantSpec::Null(p) => p.udim(),
        }
    }

    pub fn limits(&self) -> ControlLimits {
        match self {
            PlantSpec::Arm(p) => p.limits(),
            PlantSpec::Fish(p) => p.limits(),
            PlantSpec::Cyborg(p) => p.limits(),
            PlantSpec::Null(p) => p.limits(),
        }
    }
}
