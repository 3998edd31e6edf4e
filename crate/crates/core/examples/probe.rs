//! Scenario probe: train the model, run the trials, and print the
//! statistics the acceptance criteria care about. Usage:
//!     probe <preset> [controller ...]

use std::time::Instant;

use softctrl::harness::{preset, run_scenario_with_model, train_for_scenario, Controller};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().expect("usage: probe <preset> [controller ...]");
    let controllers: Vec<Controller> = {
        let rest: Vec<String> = args.collect();
        if rest.is_empty() {
            vec![preset(&name).unwrap().controller]
        } else {
            rest.iter().map(|s| s.parse().unwrap()).collect()
        }
    };
    let scenario = preset(&name).unwrap_or_else(|| panic!("no preset {name}"));
    let t0 = Instant::now();
    let model = if scenario.controller.uses_planner()
        || controllers.iter().any(|c| c.uses_planner())
    {
        let m = train_for_scenario(&scenario).unwrap();
        eprintln!(
            "model: eps_bar {:.5}, train {:.1?}s, coverage x {:?} .. {:?}",
            m.bound.epsilon,
            t0.elapsed().as_secs_f64(),
            m.bound.coverage.x_lo,
            m.bound.coverage.x_hi,
        );
        Some(m)
    } else {
        None
    };

    for controller in controllers {
        let variant = scenario.clone().with_controller(controller);
        let t1 = Instant::now();
        let outcomes = run_scenario_with_model(&variant, model.as_ref()).unwrap();
        eprintln!(
            "== {name} / {controller}: {} trials in {:.1}s",
            outcomes.len(),
            t1.elapsed().as_secs_f64()
        );
        for o in &outcomes {
            match &o.result {
                Ok(log) => {
                    let s = &log.summary;
                    if std::env::var("PROBE_DETAIL").is_ok() && s.trial == 0 {
                        // Locate the h-minimum and dump the surrounding ticks.
                        let (kmin, _) = log
                            .records
                            .iter()
                            .enumerate()
                            .min_by(|a, b| {
                                let ha = a.1.h.iter().cloned().fold(f64::INFINITY, f64::min);
                                let hb = b.1.h.iter().cloned().fold(f64::INFINITY, f64::min);
                                ha.partial_cmp(&hb).unwrap()
                            })
                            .unwrap();
                        let (lo, hi) = if std::env::var("PROBE_DETAIL").as_deref() == Ok("full") {
                            (0, 59.min(log.records.len() - 1))
                        } else {
                            (kmin.saturating_sub(25), (kmin + 8).min(log.records.len() - 1))
                        };
                        for r in &log.records[lo..=hi] {
                            eprintln!(
                                "  t {:5.2} h {:?} margin {:?} int {} fb {} adm {:?} x {:.4?} u {:.3?}",
                                r.t,
                                r.h.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
                                r.margin.map(|m| (m * 1e4).round() / 1e4),
                                r.intervened as u8,
                                r.fallback as u8,
                                r.admissible,
                                &r.x,
                                &r.u,
                            );
                        }
                    }
                    let worst_u = log
                        .records
                        .iter()
                        .flat_map(|r| r.u.iter().map(|v| v.abs()))
                        .fold(0.0, f64::max);
                    let covered = log
                        .records
                        .iter()
                        .filter(|r| r.coverage_ok != Some(false))
                        .count();
                    eprintln!(
                        "trial {}: min_h {:?} tsf {:?} asf {:?} ratio {:?} stim {:?} interv {} fallb {} track {:.4} tick {:.1}ms |u|max {:.3} cov {}/{}",
                        s.trial, s.min_h, s.min_tsf, s.min_asf, s.safety_ratio,
                        s.stimulation_count, s.interventions, s.fallbacks,
                        s.mean_tracking_distance, s.mean_tick_seconds * 1e3,
                        worst_u, covered, log.records.len(),
                    );
                }
                Err(e) => eprintln!("trial {} FAILED: {e}", o.trial),
            }
        }
    }
}
