//! Command-line front end for the control stack.
//!
//! Three pipeline stages, each a subcommand so downstream steps can reuse
//! upstream artifacts: `collect` records excitation trajectories to a
//! dataset file, `train` fits and calibrates a model checkpoint from a
//! dataset, and `run` executes closed-loop trials — inline-training a
//! model if no checkpoint is supplied — writing per-trial record logs, a
//! summary CSV, and a resolved-config snapshot. `run --compare A,B`
//! executes the scenario under two controllers on identical seeds and
//! adds a paired per-trial delta table.
//!
//! Exit codes: 0 success, 2 bad input (config, schema, missing files),
//! 3 numeric failure (divergence, non-finite dynamics).

mod commands;
mod dataset;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use softctrl::harness::{preset, preset_names, Controller, Scenario};
use softctrl::{Error, Result};

/// Environment variable overriding the default output directory.
const OUT_ENV: &str = "SOFTCTRL_OUT";

#[derive(Parser)]
#[command(
    name = "softctrl",
    version,
    about = "Learned-dynamics sampling MPC with an adaptive barrier safety filter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record excitation trajectories for system identification.
    Collect(CollectArgs),
    /// Train and calibrate a model checkpoint from a recorded dataset.
    Train(TrainArgs),
    /// Run closed-loop trials; writes logs, a summary table, and a
    /// resolved-config snapshot.
    Run(RunArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario: path to a TOML file, or a built-in preset name.
    #[arg(long)]
    scenario: String,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $SOFTCTRL_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the number of trajectories to record.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Override the number of steps per trajectory.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset file (default: <out>/<scenario>_dataset.json).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the controller: framework|no-acbf|pid|continuous.
    #[arg(long)]
    controller: Option<String>,
    /// Pre-trained model checkpoint to use instead of inline training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run under two controllers (comma-separated) on identical seeds and
    /// write a paired delta table.
    #[arg(long, value_name = "A,B")]
    compare: Option<String>,
}

impl CommonArgs {
    /// Scenario with the seed override applied. Files are validated on
    /// load; preset names must match exactly.
    fn resolve_scenario(&self) -> Result<Scenario> {
        let path = Path::new(&self.scenario);
        let mut scenario = if path.exists() {
            Scenario::load(path)?
        } else {
            preset(&self.scenario).ok_or_else(|| {
                Error::Config(format!(
                    "'{}' is neither a scenario file nor a built-in preset (presets: {})",
                    self.scenario,
                    preset_names().join(", ")
                ))
            })?
        };
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        Ok(scenario)
    }

    /// Output directory, created if missing.
    fn resolve_out(&self) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn parse_compare(spec: &str) -> Result<(Controller, Controller)> {
    let mut parts = spec.split(',');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => Ok((
            Controller::from_str(a.trim())?,
            Controller::from_str(b.trim())?,
        )),
        _ => Err(Error::Config(format!(
            "--compare expects exactly two comma-separated controllers, got '{spec}'"
        ))),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect(args) => {
            let mut scenario = args.common.resolve_scenario()?;
            let out = args.common.resolve_out()?;
            if let Some(n) = args.trajectories {
                scenario.model.collect.trajectories = n;
            }
            if let Some(k) = args.steps {
                scenario.model.collect.steps = k;
            }
            commands::collect(&scenario, &out)
        }
        Command::Train(args) => {
            let scenario = args.common.resolve_scenario()?;
            let out = args.common.resolve_out()?;
            let dataset_path = args
                .dataset
                .unwrap_or_else(|| dataset::dataset_path(&out, &scenario.name));
            commands::train(&scenario, &dataset_path, &out)
        }
        Command::Run(args) => {
            let mut scenario = args.common.resolve_scenario()?;
            let out = args.common.resolve_out()?;
            if let Some(trials) = args.trials {
                scenario.trials = trials;
            }
            if let Some(spec) = &args.controller {
                scenario.controller = Controller::from_str(spec)?;
            }
            scenario.validate()?;
            match args.compare.as_deref() {
                None => commands::run(&scenario, args.checkpoint.as_deref(), &out),
                Some(spec) => {
                    let (a, b) = parse_compare(spec)?;
                    commands::compare(&scenario, a, b, args.checkpoint.as_deref(), &out)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
