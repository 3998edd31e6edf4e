//! Learned-dynamics sampling MPC with an adaptive barrier safety filter.
//!
//! The crate couples four pieces into one control stack and ships the
//! simulation plants and experiment harness used to exercise it:
//!
//! - [`model`] — a neural derivative field `f(x, u) ≈ dx/dt` trained on
//!   recorded trajectories, with a calibrated worst-case error bound.
//! - [`planner`] — sampling-based receding-horizon planning: perturb a
//!   nominal control sequence, roll every candidate through the learned
//!   model, score, and keep the paired batch of sequences and predictions.
//! - [`safety`] — an adaptive control-barrier filter that checks the
//!   planner's pick against a margin built from the barrier value, the
//!   candidate's predicted motion, an online uncertainty estimate, and the
//!   model error bound, substituting the nearest admissible candidate when
//!   the pick fails.
//! - [`plants`] — low-dimensional ground-truth surrogates (tendon arm,
//!   swimming robot, stimulated walker) including slow stiffness fatigue
//!   and stimulus habituation effects the filter must absorb.
//!
//! [`harness`] wires the loop together per scenario (plan, filter, map the
//! chosen prediction back to its control sequence, execute the first
//! action, adapt, log) and computes the safety metrics reported by the
//! CLI. [`rng`] provides the counter-based streams that make every run
//! reproducible bit-for-bit from a single seed.

pub mod error;
pub mod harness;
pub mod integrate;
pub mod model;
pub mod planner;
pub mod plants;
pub mod rng;
pub mod safety;
pub mod types;

pub use error::{Error, Result};
