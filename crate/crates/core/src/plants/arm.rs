//! Tendon-driven soft arm surrogate.
//!
//! The tip is a damped point mass pulled toward an attractor set by the
//! four tendon inputs: the antagonistic pairs (u0, u1) and (u2, u3) shift
//! the attractor along x and y respectively, scaled by the stiffness scale
//! κ. Semi-implicit Euler integration keeps the one-step displacement from
//! rest exactly linear in κ, which the fatigue tests rely on.

use serde::{Deserialize, Serialize};

use crate::plants::Plant;
use crate::rng::RngStream;
use crate::types::{ControlLimits, StateVector};

/// Fraction of stiffness lost at full fatigue saturation.
pub const FATIGUE_LOSS: f64 = 0.4;
/// Cycle count at which fatigue saturates; wear beyond this has no further
/// effect.
pub const FATIGUE_SATURATION_CYCLES: f64 = 3000.0;

/// Physical constants of the arm surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmParams {
    /// Rest tip position, the attractor under zero input (m).
    pub rest: [f64; 3],
    /// Attractor displacement per unit antagonistic differential (m).
    pub reach: f64,
    /// Natural frequency of the spring pull toward the attractor (rad/s).
    pub omega: f64,
    /// Damping ratio of the tip dynamics.
    pub zeta: f64,
    /// Tip position is clamped to a ball of this radius around rest (m).
    pub workspace_radius: f64,
    /// Process-noise stddev on the velocity increment (m/s per sqrt(s)).
    pub noise: f64,
    /// Nominal stiffness scale before any fatigue.
    pub kappa0: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        ArmParams {
            rest: [0.0, 0.0, 0.3],
            reach: 0.3,
            omega: 6.0,
            zeta: 0.9,
            workspace_radius: 1.0,
            noise: 0.0,
            kappa0: 1.0,
        }
    }
}

/// Arm state: tip position and velocity, plus the current stiffness scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmPlant {
    pub params: ArmParams,
    pub tip: [f64; 3],
    pub velocity: [f64; 3],
    /// Current stiffness scale in (0, 1]; lowered by [`apply_fatigue`].
    pub kappa: f64,
}

impl ArmPlant {
    /// Arm at rest with nominal stiffness.
    pub fn at_rest(params: ArmParams) -> Self {
        let tip = params.rest;
        let kappa = params.kappa0;
        ArmPlant {
            params,
            tip,
            velocity: [0.0; 3],
            kappa,
        }
    }

    /// Attractor position for the given tendon input.
    fn attractor(&self, u: &[f64]) -> [f64; 3] {
        let dx = u[0] - u[1];
        let dy = u[2] - u[3];
        [
            self.params.rest[0] + self.kappa * self.params.reach * dx,
            self.params.rest[1] + self.kappa * self.params.reach * dy,
            self.params.rest[2],
        ]
    }
}

/// One control period of the arm surrogate.
///
/// Semi-implicit Euler: the velocity update (spring acceleration toward the
/// attractor, linear damping, diffusion noise) is applied first, then the
/// position moves with the updated velocity. The position is finally
/// clamped to the workspace ball around rest; velocity is left untouched by
/// the clamp since the spring pulls back naturally.
pub fn arm_step(plant: &ArmPlant, u: &[f64], dt: f64, rng: &mut RngStream) -> ArmPlant {
    debug_assert_eq!(u.len(), 4);
    debug_assert!(u.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    let mut next = plant.clone();
    let a = plant.attractor(u);
    let w = plant.params.omega;
    let damp = 2.0 * plant.params.zeta * w;
    let sigma = plant.params.noise * dt.sqrt();
    for i in 0..3 {
        let acc = w * w * (a[i] - plant.tip[i]) - damp * plant.velocity[i];
        let noise = if sigma > 0.0 {
            sigma * rng.next_gaussian()
        } else {
            0.0
        };
        next.velocity[i] = plant.velocity[i] + dt * acc + noise;
        next.tip[i] = plant.tip[i] + dt * next.velocity[i];
    }
    let r = plant.params.workspace_radius;
    let mut off = [0.0; 3];
    let mut norm2 = 0.0;
    for i in 0..3 {
        off[i] = next.tip[i] - plant.params.rest[i];
        norm2 += off[i] * off[i];
    }
    if norm2 > r * r {
        let scale = r / norm2.sqrt();
        for i in 0..3 {
            next.tip[i] = plant.params.rest[i] + off[i] * scale;
        }
    }
    next
}

/// Stiffness degradation after the given number of actuation cycles:
/// κ = κ0 · (1 − FATIGUE_LOSS · min(cycles, saturation)/saturation).
/// Monotonically non-increasing in `cycles` and flat past saturation.
pub fn apply_fatigue(plant: &ArmPlant, cycles: u64) -> ArmPlant {
    let c = (cycles as f64).min(FATIGUE_SATURATION_CYCLES);
    let mut worn = plant.clone();
    worn.kappa = plant.params.kappa0 * (1.0 - FATIGUE_LOSS * c / FATIGUE_SATURATION_CYCLES);
    worn
}

impl Plant for ArmPlant {
    fn state(&self) -> StateVector {
        StateVector::new(vec![
            self.tip[0],
            self.tip[1],
            self.tip[2],
            self.velocity[0],
            self.velocity[1],
            self.velocity[2],
        ])
    }

    fn xdim(&self) -> usize {
        6
    }

    fn udim(&self) -> usize {
        4
    }

    fn limits(&self) -> ControlLimits {
        ControlLimits::symmetric(4, 1.0)
    }

    fn step(&mut self, u: &[f64], dt: f64, rng: &mut RngStream) {
        *self = arm_step(self, u, dt, rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_arm() -> ArmPlant {
        ArmPlant::at_rest(ArmParams::default())
    }

    #[test]
    fn rest_is_equilibrium() {
        let arm = quiet_arm();
        let mut rng = RngStream::new(0);
        let next = arm_step(&arm, &[0.0; 4], 0.05, &mut rng);
        assert_eq!(next, arm);
    }

    #[test]
    fn antagonistic_pair_moves_along_its_axis_only() {
        let arm = quiet_arm();
        let mut rng = RngStream::new(0);
        let next = arm_step(&arm, &[0.4, -0.4, 0.0, 0.0], 0.05, &mut rng);
        assert!(next.velocity[0] > 0.0);
        assert_eq!(next.velocity[1], 0.0);
        assert_eq!(next.velocity[2], 0.0);
        assert!(next.tip[0] > arm.tip[0]);
        assert_eq!(next.tip[1], arm.tip[1]);
    }

    /// The one-step displacement from rest scales exactly linearly with the
    /// stiffness scale: halving κ halves the displacement bit-for-bit
    /// (the κ factor enters as a single product before integration).
    #[test]
    fn one_step_displacement_linear_in_stiffness() {
        let mut full = quiet_arm();
        full.kappa = 1.0;
        let mut half = quiet_arm();
        half.kappa = 0.5;
        let u = [0.7, -0.1, 0.3, 0.8];
        let mut rng = RngStream::new(0);
        let nf = arm_step(&full, &u, 0.05, &mut rng);
        let nh = arm_step(&half, &u, 0.05, &mut rng);
        for i in 0..3 {
            let df = nf.tip[i] - full.tip[i];
            let dh = nh.tip[i] - half.tip[i];
            assert_eq!(df, 2.0 * dh, "axis {i}");
        }
    }

    #[test]
    fn fatigue_drift_law() {
        let arm = quiet_arm();
        assert_eq!(apply_fatigue(&arm, 0).kappa, 1.0);
        let worn = apply_fatigue(&arm, 3000);
        assert!((worn.kappa - 0.6).abs() < 1e-15);
        assert_eq!(apply_fatigue(&arm, 6000).kappa, worn.kappa);
    }

    #[test]
    fn fatigue_is_monotone_non_increasing() {
        let arm = quiet_arm();
        let mut prev = f64::INFINITY;
        for cycles in (0..=4000).step_by(250) {
            let k = apply_fatigue(&arm, cycles).kappa;
            assert!(k <= prev);
            assert!(k > 0.0);
            prev = k;
        }
    }

    #[test]
    fn workspace_clamp_holds() {
        let mut params = ArmParams::default();
        params.workspace_radius = 0.2;
        let mut arm = ArmPlant::at_rest(params);
        let mut rng = RngStream::new(0);
        for _ in 0..200 {
            arm = arm_step(&arm, &[1.0, -1.0, 1.0, -1.0], 0.05, &mut rng);
        }
        let r: f64 = (0..3)
            .map(|i| (arm.tip[i] - arm.params.rest[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(r <= 0.2 + 1e-12);
    }

    #[test]
    fn noise_off_stepping_is_deterministic() {
        let arm = quiet_arm();
        let u = [0.2, 0.0, -0.3, 0.1];
        let mut r1 = RngStream::new(1);
        let mut r2 = RngStream::new(999);
        assert_eq!(arm_step(&arm, &u, 0.05, &mut r1), arm_step(&arm, &u, 0.05, &mut r2));
    }
}
