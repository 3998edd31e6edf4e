//! Structured output of a trial: per-tick records and a summary.
//!
//! Records hold everything needed to recompute the summary — the summary
//! is pure bookkeeping over the records plus the scenario definition, and
//! a test asserts that recomputation reproduces it exactly. Wall-clock
//! fields are the only nondeterministic content; determinism comparisons
//! scrub them first.

use serde::{Deserialize, Serialize};

use crate::harness::metrics::{asf, is_band, tsf};
use crate::harness::scenario::{Controller, Scenario};
use crate::types::StateVector;

/// One control tick. Fields that only exist for planner-driven
/// controllers (margins, costs, admissible counts) are `None` under the
/// PID and continuous-stimulation baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    /// Time at the start of the tick (s).
    pub t: f64,
    /// State observed at time t, before the control is applied.
    pub x: Vec<f64>,
    /// Control executed over [t, t+dt).
    pub u: Vec<f64>,
    /// Barrier values h(x) at the observed state, one per scenario
    /// barrier, in scenario order.
    pub h: Vec<f64>,
    /// Admissibility margin (Φ + Π) of the executed candidate, worst
    /// across barriers.
    pub margin: Option<f64>,
    /// True when the safety filter replaced the cost-optimal candidate.
    pub intervened: bool,
    /// True when no candidate was admissible and the least-unsafe one ran.
    pub fallback: bool,
    /// Number of admissible candidates |S|.
    pub admissible: Option<usize>,
    /// Cost of the cost-optimal candidate.
    pub optimal_cost: Option<f64>,
    /// Whether the observed state was inside the model's calibrated
    /// coverage region.
    pub coverage_ok: Option<bool>,
    /// Wall-clock seconds spent deciding this tick (planning + filtering;
    /// excludes plant simulation). Nondeterministic.
    pub tick_seconds: f64,
}

/// Per-trial statistics, all derivable from the records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub steps: usize,
    /// Minimum barrier value over the trial, per scenario barrier.
    pub min_h: Vec<f64>,
    /// Minimum tracking-safety value (distance to the band boundary,
    /// scaled). None when the scenario has no band barrier.
    pub min_tsf: Option<f64>,
    /// Minimum avoidance-safety value across all obstacle barriers. None
    /// when the scenario has no obstacle barrier.
    pub min_asf: Option<f64>,
    /// Fraction of recorded states inside the first band barrier.
    pub safety_ratio: Option<f64>,
    /// Stimulation events delivered (pulsed plants only).
    pub stimulation_count: Option<u64>,
    /// Ticks on which the filter replaced the optimal candidate.
    pub interventions: usize,
    /// Ticks on which no candidate was admissible.
    pub fallbacks: usize,
    /// Mean distance to the reference target over the tracked dimensions.
    pub mean_tracking_distance: f64,
    /// Mean wall-clock seconds per tick. Nondeterministic.
    pub mean_tick_seconds: f64,
}

/// Everything recorded about one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLog {
    pub scenario: String,
    pub controller: Controller,
    pub trial: usize,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub summary: TrialSummary,
}

impl RunLog {
    /// Output file stem: `<scenario>_<trial>_<seed>`.
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.scenario, self.trial, self.seed)
    }
}

/// Recompute the per-trial summary from raw records. `run_scenario` uses
/// this to build the stored summary, and tests call it independently to
/// prove the two never drift apart.
pub fn summarize(
    scenario: &Scenario,
    trial: usize,
    seed: u64,
    records: &[RunRecord],
    stimulation_count: Option<u64>,
) -> TrialSummary {
    let band_index = scenario
        .barriers
        .iter()
        .position(|b| is_band(&b.shape));
    let obstacles: Vec<usize> = scenario
        .barriers
        .iter()
        .enumerate()
        .filter(|(_, b)| !is_band(&b.shape))
        .map(|(i, _)| i)
        .collect();

    let mut min_h = vec![f64::INFINITY; scenario.barriers.len()];
    let mut min_tsf = band_index.map(|_| f64::INFINITY);
    let mut min_asf = if obstacles.is_empty() {
        None
    } else {
        Some(f64::INFINITY)
    };
    let mut inside_band = 0usize;
    let mut interventions = 0usize;
    let mut fallbacks = 0usize;
    let mut distance_sum = 0.0;
    let mut tick_sum = 0.0;

    let tracked: Vec<usize> = scenario
        .task
        .track_weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(d, _)| d)
        .collect();

    for record in records {
        for (b, h) in record.h.iter().enumerate() {
            if *h < min_h[b] {
                min_h[b] = *h;
            }
        }
        let x = StateVector::new(record.x.clone());
        if let Some(bi) = band_index {
            let v = tsf(&x, &scenario.barriers[bi].shape, scenario.tsf_scale);
            let slot = min_tsf.as_mut().unwrap();
            if v < *slot {
                *slot = v;
            }
            if record.h[bi] >= 0.0 {
                inside_band += 1;
            }
        }
        if let Some(slot) = min_asf.as_mut() {
            for &oi in &obstacles {
                let v = asf(&x, &scenario.barriers[oi].shape);
                if v < *slot {
                    *slot = v;
                }
            }
        }
        if record.intervened {
            interventions += 1;
        }
        if record.fallback {
            fallbacks += 1;
        }
        let target = scenario.task.reference.target_at(record.t);
        let mut d2 = 0.0;
        for &dim in &tracked {
            let e = record.x[dim] - target[dim];
            d2 += e * e;
        }
        distance_sum += d2.sqrt();
        tick_sum += record.tick_seconds;
    }

    let n = records.len().max(1) as f64;
    TrialSummary {
        trial,
        seed,
        steps: records.len(),
        min_h,
        min_tsf,
        min_asf,
        safety_ratio: band_index.map(|_| inside_band as f64 / n),
        stimulation_count,
        interventions,
        fallbacks,
        mean_tracking_distance: distance_sum / n,
        mean_tick_seconds: tick_sum / n,
    }
}

/// Serialize the records as line-delimited JSON, one record per line.
pub fn records_jsonl(log: &RunLog) -> String {
    let mut out = String::new();
    for record in &log.records {
        out.push_str(&serde_json::to_string(record).expect("record serialization"));
        out.push('\n');
    }
    out
}

fn cell_f64(v: f64) -> String {
    format!("{v}")
}

fn cell_opt_f64(v: Option<f64>) -> String {
    v.map(cell_f64).unwrap_or_default()
}

/// Per-scenario summary table. One row per trial; the wall-clock column is
/// deliberately last so determinism comparisons can strip it.
pub fn summary_csv(summaries: &[TrialSummary], barrier_count: usize) -> String {
    let mut out = String::from("trial,seed,steps");
    for b in 0..barrier_count {
        out.push_str(&format!(",min_h_{b}"));
    }
    out.push_str(
        ",min_tsf,min_asf,safety_ratio,stimulation_count,interventions,fallbacks,\
         mean_tracking_distance,mean_tick_ms\n",
    );
    for s in summaries {
        out.push_str(&format!("{},{},{}", s.trial, s.seed, s.steps));
        for b in 0..barrier_count {
            out.push(',');
            out.push_str(&cell_f64(s.min_h[b]));
        }
        out.push(',');
        out.push_str(&cell_opt_f64(s.min_tsf));
        out.push(',');
        out.push_str(&cell_opt_f64(s.min_asf));
        out.push(',');
        out.push_str(&cell_opt_f64(s.safety_ratio));
        out.push(',');
        if let Some(c) = s.stimulation_count {
            out.push_str(&format!("{c}"));
        }
        out.push_str(&format!(",{},{}", s.interventions, s.fallbacks));
        out.push(',');
        out.push_str(&cell_f64(s.mean_tracking_distance));
        out.push_str(&format!(",{:.3}\n", s.mean_tick_seconds * 1000.0));
    }
    out
}

/// Drop the final (wall-clock) column from every CSV line: the rest of the
/// table is deterministic for a fixed seed and safe to compare bytewise.
pub fn strip_wall_clock_column(csv: &str) -> String {
    let mut out = String::with_capacity(csv.len());
    for line in csv.lines() {
        match line.rfind(',') {
            Some(idx) => out.push_str(&line[..idx]),
            None => out.push_str(line),
        }
        out.push('\n');
    }
    out
}

/// Zero out every wall-clock field so two logs of the same seeded trial
/// compare equal.
pub fn scrub_wall_clock(log: &mut RunLog) {
    for record in &mut log.records {
        record.tick_seconds = 0.0;
    }
    log.summary.mean_tick_seconds = 0.0;
}
