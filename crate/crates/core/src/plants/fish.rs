//! Swimming robot surrogate.
//!
//! Unicycle kinematics driven by a single scalar control, the tail bias:
//! heading rate is proportional to bias, speed relaxes toward a cruise
//! value set by the (fixed) tail-beat amplitude. Position integrates the
//! exact circular arc for each step, so a constant bias traces vertices
//! that lie exactly on a circle of radius speed/(k_turn · bias).

use serde::{Deserialize, Serialize};

use crate::plants::Plant;
use crate::rng::RngStream;
use crate::types::{ControlLimits, StateVector};

/// Physical constants of the swimmer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FishParams {
    /// Heading rate per unit tail bias (1/s).
    pub k_turn: f64,
    /// Saturation bound on the tail bias (rad).
    pub bias_max: f64,
    /// Tail-beat amplitude, fixed for a run (rad).
    pub amplitude: f64,
    /// Designed amplitude safety limit (rad); `amplitude` must not exceed it.
    pub amplitude_max: f64,
    /// Cruise speed per unit amplitude (m/s per rad).
    pub cruise_gain: f64,
    /// Time constant of speed relaxation toward cruise (s).
    pub speed_tau: f64,
    /// Heading process-noise stddev (rad per sqrt(s)).
    pub heading_noise: f64,
}

impl Default for FishParams {
    fn default() -> Self {
        FishParams {
            k_turn: 2.0,
            bias_max: 0.6,
            amplitude: 0.5,
            amplitude_max: 0.8,
            cruise_gain: 0.24,
            speed_tau: 1.5,
            heading_noise: 0.0,
        }
    }
}

/// Swimmer pose and speed. Heading is kept unwrapped (it may leave
/// (-pi, pi]) so that the state seen by the learned model is continuous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FishPlant {
    pub params: FishParams,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl FishPlant {
    /// Swimmer at the given pose, already at cruise speed.
    pub fn cruising(params: FishParams, x: f64, y: f64, heading: f64) -> Self {
        let speed = params.cruise_gain * params.amplitude;
        FishPlant {
            params,
            x,
            y,
            heading,
            speed,
        }
    }

    pub fn cruise_speed(&self) -> f64 {
        self.params.cruise_gain * self.params.amplitude
    }
}

/// One control period of the swimmer.
///
/// The heading increment (commanded turn plus noise) is integrated as an
/// exact circular arc at the current speed; the speed then relaxes one
/// Euler step toward cruise. Bias beyond the saturation bound is clamped.
pub fn fish_step(plant: &FishPlant, bias: f64, dt: f64, rng: &mut RngStream) -> FishPlant {
    let b = bias.clamp(-plant.params.bias_max, plant.params.bias_max);
    let sigma = plant.params.heading_noise * dt.sqrt();
    let noise = if sigma > 0.0 {
        sigma * rng.next_gaussian()
    } else {
        0.0
    };
    let dpsi = plant.params.k_turn * b * dt + noise;
    let mut next = plant.clone();
    let (s, psi) = (plant.speed, plant.heading);
    if dpsi.abs() > 1e-12 {
        let radius = s * dt / dpsi;
        next.x = plant.x + radius * ((psi + dpsi).sin() - psi.sin());
        next.y = plant.y - radius * ((psi + dpsi).cos() - psi.cos());
    } else {
        next.x = plant.x + s * psi.cos() * dt;
        next.y = plant.y + s * psi.sin() * dt;
    }
    next.heading = psi + dpsi;
    next.speed = s + dt * (plant.cruise_speed() - s) / plant.params.speed_tau;
    next
}

impl Plant for FishPlant {
    fn state(&self) -> StateVector {
        StateVector::new(vec![self.x, self.y, self.heading, self.speed])
    }

    fn xdim(&self) -> usize {
        4
    }

    fn udim(&self) -> usize {
        1
    }

    fn limits(&self) -> ControlLimits {
        ControlLimits::symmetric(1, self.params.bias_max)
    }

    fn step(&mut self, u: &[f64], dt: f64, rng: &mut RngStream) {
        *self = fish_step(self, u[0], dt, rng);
    }
}
