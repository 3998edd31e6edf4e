//! Stimulated walker surrogate.
//!
//! A unicycle whose heading random-walks on its own and can be kicked by
//! discrete left/right stimulation events. Repeated stimulation habituates:
//! the kick gain decays exponentially with the cumulative event count and
//! never recovers within a run. The walker moves at constant speed along
//! its current heading.

use serde::{Deserialize, Serialize};

use crate::plants::{Plant, Stimulus};
use crate::rng::RngStream;
use crate::types::{ControlLimits, StateVector};

/// Physical constants of the walker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CyborgParams {
    /// Walking speed (m/s).
    pub speed: f64,
    /// Heading change per stimulation at full responsiveness (rad).
    pub kick: f64,
    /// Stimulation-count constant of the response decay: the gain after c
    /// prior events is exp(-c / habituation_scale).
    pub habituation_scale: f64,
    /// Heading drift stddev (rad per sqrt(s)).
    pub heading_noise: f64,
}

impl Default for CyborgParams {
    fn default() -> Self {
        CyborgParams {
            speed: 0.03,
            kick: 0.3,
            habituation_scale: 60.0,
            heading_noise: 0.1,
        }
    }
}

/// Walker pose plus habituation bookkeeping. Only the pose is exposed as
/// the model/planner state; the stimulation count is the slowly drifting
/// hidden variable the adaptive safety filter has to live with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CyborgPlant {
    pub params: CyborgParams,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Cumulative stimulation events delivered so far.
    pub stim_count: u64,
}

impl CyborgPlant {
    pub fn at_pose(params: CyborgParams, x: f64, y: f64, heading: f64) -> Self {
        CyborgPlant {
            params,
            x,
            y,
            heading,
            stim_count: 0,
        }
    }

    /// Current stimulus response gain, exp(-count / scale). Non-increasing
    /// in the count, equal to 1 for a fresh walker, and never zero.
    pub fn response_gain(&self) -> f64 {
        (-(self.stim_count as f64) / self.params.habituation_scale).exp()
    }
}

/// One control period of the walker.
///
/// A stimulation event (if any) kicks the heading by ±kick scaled by the
/// response gain at the pre-event count, then increments the count. The
/// heading then accumulates drift noise, and the walker advances straight
/// along the updated heading. Left kicks are positive (counterclockwise).
pub fn cyborg_step(
    plant: &CyborgPlant,
    stimulus: Stimulus,
    dt: f64,
    rng: &mut RngStream,
) -> CyborgPlant {
    let mut next = plant.clone();
    match stimulus {
        Stimulus::None => {}
        Stimulus::Left => {
            next.heading += plant.params.kick * plant.response_gain();
            next.stim_count += 1;
        }
        Stimulus::Right => {
            next.heading -= plant.params.kick * plant.response_gain();
            next.stim_count += 1;
        }
    }
    let sigma = plant.params.heading_noise * dt.sqrt();
    if sigma > 0.0 {
        next.heading += sigma * rng.next_gaussian();
    }
    next.x += plant.params.speed * next.heading.cos() * dt;
    next.y += plant.params.speed * next.heading.sin() * dt;
    next
}

impl Plant for CyborgPlant {
    fn state(&self) -> StateVector {
        StateVector::new(vec![self.x, self.y, self.heading])
    }

    fn xdim(&self) -> usize {
        3
    }

    fn udim(&self) -> usize {
        1
    }

    fn limits(&self) -> ControlLimits {
        ControlLimits::symmetric(1, 1.0)
    }

    fn step(&mut self, u: &[f64], dt: f64, rng: &mut RngStream) {
        *self = cyborg_step(self, super::stimulus_from_control(u[0]), dt, rng);
    }

    fn stimulation_count(&self) -> Option<u64> {
        Some(self.stim_count)
    }
}
