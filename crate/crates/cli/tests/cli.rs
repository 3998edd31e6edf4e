//! End-to-end tests of the binary: exit codes, file outputs, and
//! determinism, driven through `std::process::Command`.

use std::path::Path;
use std::process::{Command, Output};

use softctrl::harness::RunRecord;

fn softctrl(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_softctrl"));
    cmd.args(args);
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = softctrl(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_expect_code(args: &[&str], code: i32) -> Output {
    let out = softctrl(args).output().expect("binary runs");
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code} for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Drop the final column of every CSV line (the wall-clock column), which
/// is the only nondeterministic part of a summary table.
fn strip_last_column(csv: &str) -> String {
    csv.lines()
        .map(|l| &l[..l.rfind(',').unwrap_or(l.len())])
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse a JSONL record log and zero the wall-clock fields.
fn scrubbed_records(path: &Path) -> Vec<RunRecord> {
    read(path)
        .lines()
        .map(|line| {
            let mut r: RunRecord = serde_json::from_str(line).expect("record line parses");
            r.tick_seconds = 0.0;
            r
        })
        .collect()
}

#[test]
fn zero_trajectories_collect_warns_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let result = run_ok(&["collect", "--scenario", "null", "--out", out, "--trajectories", "0"]);
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("warning"), "stderr: {stderr}");
    let body = read(&dir.path().join("null_dataset.json"));
    assert!(body.contains("\"trajectories\":[]"), "dataset not empty: {body}");
}

#[test]
fn collect_is_byte_identical_across_reruns() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_ok(&["collect", "--scenario", "null", "--out", dir_a.path().to_str().unwrap()]);
    run_ok(&["collect", "--scenario", "null", "--out", dir_b.path().to_str().unwrap()]);
    assert_eq!(
        read(&dir_a.path().join("null_dataset.json")),
        read(&dir_b.path().join("null_dataset.json"))
    );
}

#[test]
fn collect_writes_exactly_n_trajectories_of_k_plus_one_states() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "collect", "--scenario", "null",
        "--out", dir.path().to_str().unwrap(),
        "--trajectories", "3",
        "--steps", "5",
    ]);
    let body = read(&dir.path().join("null_dataset.json"));
    let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
    let trajectories = parsed["trajectories"].as_array().unwrap();
    assert_eq!(trajectories.len(), 3);
    let mut states = 0;
    for t in trajectories {
        states += t["states"].as_array().unwrap().len();
    }
    assert_eq!(states, 3 * (5 + 1), "expected N*(K+1) recorded states");
}

#[test]
fn collect_honors_output_directory_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let out = softctrl(&["collect", "--scenario", "null"])
        .env("SOFTCTRL_OUT", dir.path())
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    assert!(dir.path().join("null_dataset.json").exists());
}

#[test]
fn unwritable_output_path_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not_a_dir");
    std::fs::write(&blocker, "occupied").unwrap();
    run_expect_code(
        &["collect", "--scenario", "null", "--out", blocker.to_str().unwrap()],
        2,
    );
}

#[test]
fn train_without_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    run_expect_code(
        &["train", "--scenario", "null", "--out", dir.path().to_str().unwrap()],
        2,
    );
}

#[test]
fn train_is_deterministic_and_reports_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["collect", "--scenario", "null", "--out", out]);
    let first = run_ok(&["train", "--scenario", "null", "--out", out]);
    let checkpoint = read(&dir.path().join("null_model.json"));
    run_ok(&["train", "--scenario", "null", "--out", out]);
    assert_eq!(checkpoint, read(&dir.path().join("null_model.json")), "checkpoint not reproducible");

    // "max validation residual R -> error bound E (safety factor F)":
    // the calibration definition guarantees R <= E / F.
    let stdout = String::from_utf8_lossy(&first.stdout);
    let line = stdout
        .lines()
        .find(|l| l.starts_with("max validation residual"))
        .expect("calibration line printed");
    let nums: Vec<f64> = line
        .split_whitespace()
        .filter_map(|w| w.trim_end_matches(')').parse().ok())
        .collect();
    let (residual, bound, factor) = (nums[0], nums[1], nums[2]);
    assert!(residual <= bound / factor * (1.0 + 1e-12), "{line}");
}

#[test]
fn training_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // A step size so large the first optimizer step sends the unrolled
    // rollout to overflow.
    let scenario = r#"
name = "diverge"
duration = 1.0
dt = 0.05
seed = 1

[plant]
kind = "null"
x = 0.0
y = 0.0

[task]
track_weights = [1.0, 1.0]
[task.reference]
kind = "waypoint"
target = [0.0, 0.0]

[sampler]
n = 8
horizon = 4
beta = 1.0
stddev = [0.3]

[model]
hidden = []
epochs = 40
learn_rate = 1e14

[model.collect]
trajectories = 4
steps = 30
"#;
    let path = dir.path().join("diverge.toml");
    std::fs::write(&path, scenario).unwrap();
    run_ok(&["collect", "--scenario", path.to_str().unwrap(), "--out", out]);
    run_expect_code(&["train", "--scenario", path.to_str().unwrap(), "--out", out], 3);
}

#[test]
fn unknown_scenario_key_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"bad\"\nwarp_factor = 9\n").unwrap();
    let out = run_expect_code(
        &["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        2,
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warp_factor"), "offending key not named: {stderr}");
}

#[test]
fn unknown_preset_name_exits_2_listing_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_expect_code(
        &["run", "--scenario", "no-such-thing", "--out", dir.path().to_str().unwrap()],
        2,
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("null") && stderr.contains("cyborg-corridor"), "{stderr}");
}

#[test]
fn invalid_controller_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    run_expect_code(
        &[
            "run", "--scenario", "null",
            "--out", dir.path().to_str().unwrap(),
            "--controller", "bang-bang",
        ],
        2,
    );
}

#[test]
fn controller_plant_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // The PID baseline is only defined for the swimmer plant.
    run_expect_code(
        &[
            "run", "--scenario", "null",
            "--out", dir.path().to_str().unwrap(),
            "--controller", "pid",
        ],
        2,
    );
}

#[test]
fn checkpoint_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["collect", "--scenario", "null", "--out", out]);
    run_ok(&["train", "--scenario", "null", "--out", out]);
    let checkpoint = dir.path().join("null_model.json");
    // A 2-state checkpoint cannot drive the 6-state arm.
    run_expect_code(
        &[
            "run", "--scenario", "arm-square",
            "--out", out,
            "--checkpoint", checkpoint.to_str().unwrap(),
        ],
        2,
    );
}

#[test]
fn null_run_writes_logs_snapshot_and_clean_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["run", "--scenario", "null", "--out", out]);
    assert!(dir.path().join("null_0_7.jsonl").exists());
    assert!(dir.path().join("null_1_7.jsonl").exists());
    assert!(dir.path().join("null_config.toml").exists());

    let csv = read(&dir.path().join("null_summary.csv"));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let interventions_col = header.iter().position(|h| *h == "interventions").unwrap();
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[interventions_col], "0", "null scenario must not intervene: {line}");
        rows += 1;
    }
    assert_eq!(rows, 2, "one summary row per trial");
}

#[test]
fn resolved_snapshot_reproduces_the_run() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = dir_a.path().to_str().unwrap();
    run_ok(&["run", "--scenario", "null", "--out", out_a, "--seed", "99", "--trials", "3"]);
    let snapshot = dir_a.path().join("null_config.toml");
    run_ok(&[
        "run", "--scenario", snapshot.to_str().unwrap(),
        "--out", dir_b.path().to_str().unwrap(),
    ]);

    let summary_a = read(&dir_a.path().join("null_summary.csv"));
    let summary_b = read(&dir_b.path().join("null_summary.csv"));
    assert_eq!(strip_last_column(&summary_a), strip_last_column(&summary_b));
    for trial in 0..3 {
        let name = format!("null_{trial}_99.jsonl");
        assert_eq!(
            scrubbed_records(&dir_a.path().join(&name)),
            scrubbed_records(&dir_b.path().join(&name)),
            "{name} differs"
        );
    }
    assert_eq!(read(&snapshot), read(&dir_b.path().join("null_config.toml")));
}

#[test]
fn compare_mode_writes_paired_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&[
        "run", "--scenario", "null", "--out", out,
        "--compare", "framework,no-acbf",
    ]);
    assert!(dir.path().join("null-framework_summary.csv").exists());
    assert!(dir.path().join("null-no-acbf_summary.csv").exists());

    let csv = read(&dir.path().join("null_compare.csv"));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"min_h:framework") && header.contains(&"min_h:no-acbf"));
    // The filter never intervenes on the null task, so the two variants
    // execute identical controls and every paired delta is zero.
    let delta_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.ends_with(":delta"))
        .map(|(i, _)| i)
        .collect();
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        for &c in &delta_cols {
            if !cells[c].is_empty() {
                assert_eq!(cells[c].parse::<f64>().unwrap(), 0.0, "nonzero delta in {line}");
            }
        }
        rows += 1;
    }
    assert_eq!(rows, 2);
}
