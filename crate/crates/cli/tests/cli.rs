//! End-to-end tests of the binary: bundle round trips, determinism, replay
//! tamper detection, exit-code buckets, and the verify report format. A
//! shared simulate bundle keeps the wall time down.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn ucsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ucsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32, ctx: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{ctx}: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        stderr_of(out)
    );
}

/// One simulate run of the bundled two-candidate scenario, shared by the
/// read-only tests.
fn shared_bundle() -> &'static Path {
    static BUNDLE: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_keep, path) = BUNDLE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let out = dir.path().join("bundle");
        let res = ucsim(&[
            "simulate",
            "--scenario",
            workspace_file("scenarios/two_candidate.toml").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&res, 0, "shared simulate");
        (dir, out)
    });
    path
}

fn copy_bundle(to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(shared_bundle()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

#[test]
fn simulate_writes_a_replayable_bundle() {
    let bundle = shared_bundle();
    for name in [
        "manifest.json",
        "scenario.toml",
        "trace.ndjson",
        "belief_snapshots.ndjson",
        "realized.json",
    ] {
        assert!(bundle.join(name).exists(), "missing {name}");
    }
    let trace = std::fs::read_to_string(bundle.join("trace.ndjson")).unwrap();
    assert_eq!(trace.lines().count(), 8);

    let scenario_bytes = std::fs::read(workspace_file("scenarios/two_candidate.toml")).unwrap();
    let digest: String = Sha256::digest(&scenario_bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["scenario_digest"], serde_json::json!(digest));
    assert_eq!(manifest["seed"], serde_json::json!(7));

    let replayed = ucsim(&["replay", "--bundle", bundle.to_str().unwrap()]);
    assert_exit(&replayed, 0, "replay of fresh bundle");
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("again");
    let res = ucsim(&[
        "simulate",
        "--scenario",
        workspace_file("scenarios/two_candidate.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0, "second simulate");
    for name in ["trace.ndjson", "belief_snapshots.ndjson", "realized.json"] {
        let a = std::fs::read(shared_bundle().join(name)).unwrap();
        let b = std::fs::read(out.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn replay_rejects_a_tampered_value() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("tampered");
    copy_bundle(&bundle);

    let trace_path = bundle.join("trace.ndjson");
    let raw = std::fs::read_to_string(&trace_path).unwrap();
    let mut lines: Vec<String> = raw.lines().map(str::to_string).collect();
    let mut step: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    let bumped = step["planned_value"].as_f64().unwrap() + 1e-3;
    step["planned_value"] = serde_json::json!(bumped);
    lines[0] = serde_json::to_string(&step).unwrap();
    std::fs::write(&trace_path, lines.join("\n") + "\n").unwrap();

    let res = ucsim(&["replay", "--bundle", bundle.to_str().unwrap()]);
    assert_exit(&res, 1, "replay of tampered bundle");
    assert!(
        stderr_of(&res).contains("replay diverged"),
        "stderr: {}",
        stderr_of(&res)
    );
}

#[test]
fn replay_rejects_a_corrupt_record() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("corrupt");
    copy_bundle(&bundle);

    let trace_path = bundle.join("trace.ndjson");
    let raw = std::fs::read_to_string(&trace_path).unwrap();
    let mut lines: Vec<String> = raw.lines().map(str::to_string).collect();
    lines[1] = "{this is not json".to_string();
    std::fs::write(&trace_path, lines.join("\n") + "\n").unwrap();

    let res = ucsim(&["replay", "--bundle", bundle.to_str().unwrap()]);
    assert_exit(&res, 2, "replay of corrupt bundle");
}

#[test]
fn replay_rejects_an_edited_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("edited");
    copy_bundle(&bundle);

    let path = bundle.join("scenario.toml");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("\n# post-run edit\n");
    std::fs::write(&path, text).unwrap();

    let res = ucsim(&["replay", "--bundle", bundle.to_str().unwrap()]);
    assert_exit(&res, 1, "replay of edited scenario");
    assert!(
        stderr_of(&res).contains("digest"),
        "stderr: {}",
        stderr_of(&res)
    );
}

const GATE_SCENARIO: &str = r#"
seed = 0

[dynamics.truth]
kind = "pure_control"
state_dim = 1
bound_c = 1.0

[belief]
kernel_radius = 0.5

[belief.exposure_grid]
lower = [-2.0]
upper = [2.0]
nodes = [21]

[[belief.candidates]]
weight = 1.0
kind = "scalar"
a = 1.0
b = 1.0
drift = 0.0
lipschitz_l = 1.0
bound_c = 3.1

[cost]
kind = "quadratic"
state_weights = [1.0]
control_weights = [0.0]
offset = 1.0
lipschitz_lj = 4.0
sup_bound = 5.0

[discount]
lambda = 0.5

[control]
lower = [-1.0]
upper = [1.0]

[planner]
n_segments = 2
restarts = 1
integrator_step = 0.05
tail_tol = 1e-2

[simulator]
x0 = [0.5]
episode_duration = 0.5
n_episodes = 1
integrator_step = 0.05
"#;

#[test]
fn discount_below_growth_rate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gate.toml");
    std::fs::write(&path, GATE_SCENARIO).unwrap();
    let res = ucsim(&[
        "simulate",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&res, 1, "simulate below the discount gate");
    assert!(
        stderr_of(&res).contains("must exceed the ensemble state Lipschitz"),
        "stderr: {}",
        stderr_of(&res)
    );
}

const HUGE_GRID_SCENARIO: &str = r#"
seed = 0

[dynamics.truth]
kind = "pure_control"
state_dim = 3
bound_c = 1.8

[belief]
kernel_radius = 0.5

[belief.exposure_grid]
lower = [-2.0, -2.0, -2.0]
upper = [2.0, 2.0, 2.0]
nodes = [5, 5, 5]

[cost]
kind = "abs_state"
weights = [1.0, 1.0, 1.0]
lipschitz_lj = 1.8
sup_bound = 6.0

[discount]
lambda = 1.0

[control]
lower = [-1.0, -1.0, -1.0]
upper = [1.0, 1.0, 1.0]

[hjb]
dt = 0.05
control_points_per_axis = [3, 3, 3]

[hjb.grid]
lower = [-2.0, -2.0, -2.0]
upper = [2.0, 2.0, 2.0]
nodes = [201, 201, 201]
"#;

#[test]
fn node_cap_blocks_oversized_grids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("huge.toml");
    std::fs::write(&path, HUGE_GRID_SCENARIO).unwrap();
    let res = ucsim(&[
        "solve-hjb",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&res, 1, "solve-hjb beyond the node cap");
    assert!(
        stderr_of(&res).contains("exceeds the configured cap"),
        "stderr: {}",
        stderr_of(&res)
    );
}

#[test]
fn unreadable_inputs_use_the_parse_exit_code() {
    let missing = ucsim(&[
        "simulate",
        "--scenario",
        "/nonexistent/scenario.toml",
        "--out",
        "/tmp/never-written",
    ]);
    assert_exit(&missing, 2, "missing scenario file");

    let no_hjb = ucsim(&[
        "solve-hjb",
        "--scenario",
        workspace_file("scenarios/two_candidate.toml").to_str().unwrap(),
        "--out",
        "/tmp/never-written",
    ]);
    assert_exit(&no_hjb, 2, "scenario without [hjb]");
    assert!(stderr_of(&no_hjb).contains("[hjb]"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"not a number\"").unwrap();
    let res = ucsim(&[
        "simulate",
        "--scenario",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&res, 2, "type error in scenario");
}

#[test]
fn verify_reports_healthy_and_faulted_sets() {
    let dir = tempfile::tempdir().unwrap();
    let healthy = ucsim(&[
        "verify",
        "--scenario",
        workspace_file("scenarios/verify_set.toml").to_str().unwrap(),
        "--out",
        dir.path().join("healthy").to_str().unwrap(),
    ]);
    assert_exit(&healthy, 0, "healthy verify set");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("healthy/report.json")).unwrap(),
    )
    .unwrap();
    let outcomes = report[0]["report"]["outcomes"].as_array().unwrap();
    assert_eq!(outcomes.len(), 3);
    assert!(outcomes
        .iter()
        .all(|o| o["status"]["kind"] == serde_json::json!("pass")));

    let faulted = ucsim(&[
        "verify",
        "--scenario",
        workspace_file("scenarios/verify_set_faults.toml").to_str().unwrap(),
        "--out",
        dir.path().join("faulted").to_str().unwrap(),
    ]);
    assert_exit(&faulted, 1, "faulted verify set");
    assert!(stderr_of(&faulted).contains("scaling-identity"));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("faulted/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        report[0]["report"]["outcomes"][0]["status"]["kind"],
        serde_json::json!("fail")
    );
}

#[test]
fn verify_rejects_unknown_tolerance_keys() {
    let dir = tempfile::tempdir().unwrap();
    let res = ucsim(&[
        "verify",
        "--scenario",
        workspace_file("scenarios/verify_set.toml").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--tol-overrides",
        "no_such_knob=0.5",
    ]);
    assert_exit(&res, 2, "unknown tolerance key");
    assert!(stderr_of(&res).contains("no_such_knob"));
}

#[test]
fn empty_verify_set_writes_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("empty.toml");
    std::fs::write(&set, "# no runs configured\n").unwrap();
    let res = ucsim(&[
        "verify",
        "--scenario",
        set.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&res, 0, "empty verify set");
    let report: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/report.json")).unwrap(),
    )
    .unwrap();
    assert!(report.is_empty());
}

#[test]
fn solve_hjb_reports_convergence_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solved");
    let res = ucsim(&[
        "solve-hjb",
        "--scenario",
        workspace_file("scenarios/benchmark_1d.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0, "benchmark solve");
    let vf: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("value_field.json")).unwrap())
            .unwrap();
    assert_eq!(vf["converged"], serde_json::json!(true));
    assert_eq!(vf["values"].as_array().unwrap().len(), 201);

    // One sweep cannot converge; the run still succeeds and says so.
    let starved = dir.path().join("starved.toml");
    let text = std::fs::read_to_string(workspace_file("scenarios/benchmark_1d.toml"))
        .unwrap()
        .replace("[hjb]\n", "[hjb]\nmax_sweeps = 1\n");
    std::fs::write(&starved, text).unwrap();
    let out2 = dir.path().join("starved");
    let res2 = ucsim(&[
        "solve-hjb",
        "--scenario",
        starved.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_exit(&res2, 0, "starved solve");
    let vf2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("value_field.json")).unwrap())
            .unwrap();
    assert_eq!(vf2["converged"], serde_json::json!(false));
    assert_eq!(vf2["iterations"], serde_json::json!(1));
}

#[test]
fn seed_override_is_recorded_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("reseeded");
    let res = ucsim(&[
        "simulate",
        "--scenario",
        workspace_file("scenarios/two_candidate.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_exit(&res, 0, "reseeded simulate");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], serde_json::json!(99));

    // The recorded seed drives the replay, so the bundle still verifies.
    let replayed = ucsim(&["replay", "--bundle", out.to_str().unwrap()]);
    assert_exit(&replayed, 0, "replay of reseeded bundle");
}
