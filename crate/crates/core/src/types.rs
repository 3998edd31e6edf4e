//! Plain value types shared across the stack: states, bounded controls,
//! and fixed-step trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-dimension real state with plant-specific unit semantics
/// (positions in meters, angles in radians, rates per second).
///
/// Entries are finite by construction; operations that could produce
/// non-finite values (integration, model evaluation) return errors before a
/// `StateVector` is ever built from bad data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    values: Vec<f64>,
}

impl StateVector {
    /// Wraps the given entries. Panics on non-finite input; callers that
    /// can legitimately produce NaN/Inf must check before constructing.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite state entry"
        );
        StateVector { values }
    }

    pub fn zeros(dim: usize) -> Self {
        StateVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.clone()
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Per-entry closed control bounds `[lo_j, hi_j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ControlLimits {
    /// Symmetric bounds `[-bound, bound]` on every entry.
    pub fn symmetric(dim: usize, bound: f64) -> Self {
        assert!(bound >= 0.0, "negative control bound");
        ControlLimits {
            lo: vec![-bound; dim],
            hi: vec![bound; dim],
        }
    }

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "limit length mismatch");
        assert!(
            lo.iter().zip(&hi).all(|(l, h)| l <= h),
            "inverted control interval"
        );
        ControlLimits { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp_in_place(&self, values: &mut [f64]) {
        for (v, (l, h)) in values.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dim()
            && values
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// Control input clamped to its per-entry limits at construction, so an
/// in-bounds value round-trips unchanged and an out-of-bounds one is
/// projected onto the interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    values: Vec<f64>,
    limits: ControlLimits,
}

impl ControlVector {
    pub fn new(mut values: Vec<f64>, limits: ControlLimits) -> Self {
        assert_eq!(values.len(), limits.dim(), "control/limit dim mismatch");
        limits.clamp_in_place(&mut values);
        ControlVector { values, limits }
    }

    pub fn zeros(limits: ControlLimits) -> Self {
        ControlVector::new(vec![0.0; limits.dim()], limits)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn limits(&self) -> &ControlLimits {
        &self.limits
    }
}

/// Uniformly sampled trajectory: `K+1` states bracketing `K` controls, with
/// state `k` observed at time `t0 + k·dt` and control `k` applied over the
/// step from state `k` to state `k+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<StateVector>,
    controls: Vec<ControlVector>,
    dt: f64,
    t0: f64,
}

impl Trajectory {
    pub fn new(
        states: Vec<StateVector>,
        controls: Vec<ControlVector>,
        dt: f64,
        t0: f64,
    ) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::Config(format!("trajectory dt must be > 0, got {dt}")));
        }
        if states.len() != controls.len() + 1 {
            return Err(Error::Config(format!(
                "trajectory needs one more state than controls: {} states, {} controls",
                states.len(),
                controls.len()
            )));
        }
        if let Some(first) = states.first() {
            if states.iter().any(|s| s.dim() != first.dim()) {
                return Err(Error::Config("inconsistent state dims in trajectory".into()));
            }
        }
        Ok(Trajectory {
            states,
            controls,
            dt,
            t0,
        })
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn controls(&self) -> &[ControlVector] {
        &self.controls
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Number of steps (= number of controls).
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Time of state `k`.
    pub fn time_of(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_clamps_at_construction() {
        let lim = ControlLimits::symmetric(3, 1.0);
        let u = ControlVector::new(vec![2.0, -5.0, 0.25], lim);
        assert_eq!(u.as_slice(), &[1.0, -1.0, 0.25]);
    }

    #[test]
    fn in_bounds_control_is_identity() {
        let lim = ControlLimits::new(vec![-0.5, 0.0], vec![0.5, 2.0]);
        let vals = vec![0.25, 1.5];
        let u = ControlVector::new(vals.clone(), lim);
        assert_eq!(u.as_slice(), vals.as_slice());
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn state_rejects_nan() {
        StateVector::new(vec![0.0, f64::NAN]);
    }

    #[test]
    fn trajectory_length_invariant() {
        let lim = ControlLimits::symmetric(1, 1.0);
        let states = vec![StateVector::zeros(2); 3];
        let controls = vec![ControlVector::zeros(lim.clone()); 2];
        let traj = Trajectory::new(states.clone(), controls, 0.1, 0.0).unwrap();
        assert_eq!(traj.len(), 2);
        assert!((traj.time_of(2) - 0.2).abs() < 1e-15);

        let bad = Trajectory::new(states, vec![], 0.1, 0.0);
        assert!(bad.is_err());
    }

    #[test]
    fn trajectory_rejects_bad_dt() {
        let states = vec![StateVector::zeros(1)];
        assert!(Trajectory::new(states, vec![], 0.0, 0.0).is_err());
    }
}
