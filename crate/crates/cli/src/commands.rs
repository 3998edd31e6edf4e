//! Subcommand implementations.

use std::fs;
use std::path::Path;

use softctrl::harness::{
    collect_trajectories, collection_stream, records_jsonl, run_scenario_with_model, summary_csv,
    train_for_scenario, Controller, Scenario, TrialSummary,
};
use softctrl::model::{
    calibrate_error_bound, evaluate_loss, train_with_history, Architecture, Dataset, TrainedModel,
    CALIBRATION_SAFETY_FACTOR,
};
use softctrl::types::Trajectory;
use softctrl::{Error, Result};

use crate::dataset::{checkpoint_path, dataset_path, DatasetFile};

/// Per-dimension `[lo, hi]` ranges, printed like `[-0.1, 0.2] [0.0, 1.0]`.
fn format_ranges(lo: &[f64], hi: &[f64]) -> String {
    lo.iter()
        .zip(hi)
        .map(|(l, h)| format!("[{l:.4}, {h:.4}]"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Elementwise min/max over a sequence of vectors.
fn ranges_of<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for row in rows {
        for (d, v) in row.iter().enumerate() {
            lo[d] = lo[d].min(*v);
            hi[d] = hi[d].max(*v);
        }
    }
    (lo, hi)
}

fn print_data_coverage(trajectories: &[Trajectory], xdim: usize, udim: usize) {
    let (xlo, xhi) = ranges_of(
        trajectories
            .iter()
            .flat_map(|t| t.states().iter().map(|s| s.as_slice())),
        xdim,
    );
    let (ulo, uhi) = ranges_of(
        trajectories
            .iter()
            .flat_map(|t| t.controls().iter().map(|u| u.as_slice())),
        udim,
    );
    println!("state coverage:   {}", format_ranges(&xlo, &xhi));
    println!("control coverage: {}", format_ranges(&ulo, &uhi));
}

/// `collect`: record excitation trajectories on the identification rig
/// (the collect-plant override when set, the deployment plant otherwise).
pub fn collect(scenario: &Scenario, out: &Path) -> Result<()> {
    let rig = scenario
        .model
        .collect
        .plant
        .clone()
        .unwrap_or_else(|| scenario.plant.clone());
    let trajectories = collect_trajectories(
        &rig,
        &scenario.model.collect,
        scenario.dt,
        &collection_stream(scenario.seed),
    );
    let path = dataset_path(out, &scenario.name);
    let file = DatasetFile {
        dt: scenario.dt,
        xdim: rig.xdim(),
        udim: rig.udim(),
        trajectories,
    };
    file.save(&path)?;
    if file.trajectories.is_empty() {
        eprintln!("warning: 0 trajectories requested; wrote an empty dataset");
    } else {
        print_data_coverage(&file.trajectories, file.xdim, file.udim);
    }
    println!(
        "collected {} trajectories ({} steps each, dt={}) -> {}",
        file.trajectories.len(),
        scenario.model.collect.steps,
        file.dt,
        path.display()
    );
    Ok(())
}

/// `train`: fit the derivative network on a recorded dataset, calibrate
/// the error bound on the validation split, and save the checkpoint.
pub fn train(scenario: &Scenario, dataset_file: &Path, out: &Path) -> Result<()> {
    let file = DatasetFile::load(dataset_file)?;
    if file.trajectories.is_empty() {
        return Err(Error::Config(format!(
            "dataset {} contains no trajectories",
            dataset_file.display()
        )));
    }
    let dataset = Dataset::split_every(file.trajectories, scenario.model.collect.val_every);
    let arch = Architecture::with_hidden(file.xdim, file.udim, scenario.model.hidden.clone());
    let hyper = scenario.model.hyper(scenario.seed);
    let (params, history) = train_with_history(&dataset, arch, &hyper)?;
    let val_loss = evaluate_loss(&params, &dataset.validation, hyper.window, hyper.stride)?;
    let bound = calibrate_error_bound(&params, &dataset.validation, file.dt)?;
    let model = TrainedModel::new(params, bound, file.dt);
    let path = checkpoint_path(out, &scenario.name);
    model.save(&path)?;
    println!(
        "trained {} epochs on {} trajectories ({} held out): train loss {:.6e} -> {:.6e}",
        history.len(),
        dataset.train.len(),
        dataset.validation.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN),
    );
    println!("validation loss {val_loss:.6e}");
    println!(
        "max validation residual {} -> error bound {} (safety factor {})",
        model.bound.epsilon / CALIBRATION_SAFETY_FACTOR,
        model.bound.epsilon,
        CALIBRATION_SAFETY_FACTOR
    );
    println!(
        "calibrated coverage: x {} | u {}",
        format_ranges(&model.bound.coverage.x_lo, &model.bound.coverage.x_hi),
        format_ranges(&model.bound.coverage.u_lo, &model.bound.coverage.u_hi)
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn worst_h(summary: &TrialSummary) -> Option<f64> {
    summary.min_h.iter().copied().reduce(f64::min)
}

/// Execute one scenario's trials and write the per-trial record logs, the
/// summary CSV, and the resolved-config snapshot. Returns the summaries
/// of the trials that completed; errors (after writing everything that
/// did complete) if any trial failed.
fn execute_and_write(
    scenario: &Scenario,
    model: Option<&TrainedModel>,
    out: &Path,
) -> Result<Vec<TrialSummary>> {
    println!(
        "scenario {}: controller {}, {} trials x {} steps",
        scenario.name,
        scenario.controller,
        scenario.trials,
        scenario.steps()
    );
    let outcomes = run_scenario_with_model(scenario, model)?;
    let mut summaries = Vec::new();
    let mut failure = None;
    for outcome in outcomes {
        match outcome.result {
            Ok(log) => {
                let path = out.join(format!("{}.jsonl", log.file_stem()));
                fs::write(&path, records_jsonl(&log))?;
                let s = &log.summary;
                println!(
                    "  trial {} (seed {}): min_h {:?} tsf {:?} asf {:?} interventions {} fallbacks {} track {:.4}",
                    s.trial,
                    s.seed,
                    s.min_h,
                    s.min_tsf,
                    s.min_asf,
                    s.interventions,
                    s.fallbacks,
                    s.mean_tracking_distance
                );
                summaries.push(log.summary);
            }
            Err(e) => {
                eprintln!("trial {} (seed {}) failed: {e}", outcome.trial, outcome.seed);
                if failure.is_none() {
                    failure = Some(e);
                }
            }
        }
    }
    fs::write(
        out.join(format!("{}_summary.csv", scenario.name)),
        summary_csv(&summaries, scenario.barriers.len()),
    )?;
    fs::write(
        out.join(format!("{}_config.toml", scenario.name)),
        scenario.to_toml_string()?,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summaries),
    }
}

/// `run`: execute the scenario as configured.
pub fn run(scenario: &Scenario, checkpoint: Option<&Path>, out: &Path) -> Result<()> {
    let loaded = checkpoint.map(TrainedModel::load).transpose()?;
    execute_and_write(scenario, loaded.as_ref(), out)?;
    println!(
        "wrote {}_summary.csv and {}_config.toml in {}",
        scenario.name,
        scenario.name,
        out.display()
    );
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

fn delta(a: Option<f64>, b: Option<f64>) -> String {
    match (a, b) {
        (Some(a), Some(b)) => format!("{}", a - b),
        _ => String::new(),
    }
}

/// Paired per-trial table for compare mode. Controllers ran on identical
/// per-trial seeds, so rows pair by trial index; deltas are A minus B.
fn compare_csv(
    a: Controller,
    b: Controller,
    a_sums: &[TrialSummary],
    b_sums: &[TrialSummary],
) -> String {
    let metrics = ["min_h", "min_tsf", "min_asf", "safety_ratio", "stimulation", "interventions", "tracking"];
    let mut out = String::from("trial,seed");
    for m in metrics {
        out.push_str(&format!(",{m}:{a},{m}:{b},{m}:delta"));
    }
    out.push('\n');
    for (sa, sb) in a_sums.iter().zip(b_sums) {
        debug_assert_eq!(sa.seed, sb.seed, "compare rows must pair by seed");
        out.push_str(&format!("{},{}", sa.trial, sa.seed));
        let columns: [(Option<f64>, Option<f64>); 7] = [
            (worst_h(sa), worst_h(sb)),
            (sa.min_tsf, sb.min_tsf),
            (sa.min_asf, sb.min_asf),
            (sa.safety_ratio, sb.safety_ratio),
            (
                sa.stimulation_count.map(|c| c as f64),
                sb.stimulation_count.map(|c| c as f64),
            ),
            (Some(sa.interventions as f64), Some(sb.interventions as f64)),
            (
                Some(sa.mean_tracking_distance),
                Some(sb.mean_tracking_distance),
            ),
        ];
        for (va, vb) in columns {
            out.push_str(&format!(",{},{},{}", cell(va), cell(vb), delta(va, vb)));
        }
        out.push('\n');
    }
    out
}

/// `run --compare A,B`: one scenario, two controllers, identical seeds.
/// Planner-based variants share one model (the checkpoint if given,
/// otherwise trained once here) so the comparison isolates the
/// controller.
pub fn compare(
    scenario: &Scenario,
    a: Controller,
    b: Controller,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let loaded = checkpoint.map(TrainedModel::load).transpose()?;
    let trained;
    let model = if a.uses_planner() || b.uses_planner() {
        match &loaded {
            Some(m) => Some(m),
            None => {
                trained = train_for_scenario(scenario)?;
                Some(&trained)
            }
        }
    } else {
        None
    };
    let variant = |c: Controller| {
        let mut s = scenario.clone().with_controller(c);
        s.name = format!("{}-{}", scenario.name, c);
        s
    };
    let a_sums = execute_and_write(&variant(a), model, out)?;
    let b_sums = execute_and_write(&variant(b), model, out)?;
    let path = out.join(format!("{}_compare.csv", scenario.name));
    fs::write(&path, compare_csv(a, b, &a_sums, &b_sums))?;
    let mean = |sums: &[TrialSummary], f: fn(&TrialSummary) -> f64| -> f64 {
        sums.iter().map(f).sum::<f64>() / sums.len().max(1) as f64
    };
    for (c, sums) in [(a, &a_sums), (b, &b_sums)] {
        println!(
            "{c}: mean tracking {:.4}, total interventions {}, total stimulation {:?}",
            mean(sums, |s| s.mean_tracking_distance),
            sums.iter().map(|s| s.interventions).sum::<usize>(),
            sums.iter().filter_map(|s| s.stimulation_count).sum::<u64>(),
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
