//! Closed-loop experiment harness.
//!
//! Ties the pieces together: a [`Scenario`](scenario::Scenario) describes
//! one experiment (plant, task, barriers, controller, seeds); the
//! [`runner`] identifies a model from excitation data, runs the trials in
//! parallel, and produces per-tick [`RunRecord`](runlog::RunRecord)s plus
//! per-trial summaries; [`metrics`] scores trajectories; [`baselines`]
//! provides the comparison controllers; [`presets`] holds the built-in
//! scenario definitions.

pub mod baselines;
pub mod metrics;
pub mod presets;
pub mod runlog;
pub mod runner;
pub mod scenario;

pub use baselines::{continuous_stimulation_step, pid_step, PidGains, PidState};
pub use metrics::{asf, safety_ratio, tsf};
pub use presets::{preset, preset_names};
pub use runlog::{
    records_jsonl, scrub_wall_clock, strip_wall_clock_column, summarize, summary_csv, RunLog,
    RunRecord, TrialSummary,
};
pub use runner::{
    collect_trajectories, collection_stream, run_scenario, run_scenario_with_model,
    train_for_scenario, TrialOutcome,
};
pub use scenario::{AdaptiveConfig, CollectConfig, Controller, ModelConfig, Scenario};
