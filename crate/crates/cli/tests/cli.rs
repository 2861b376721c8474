use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ringhil_core::advisory::{IterationStats, PolicyFile};
use ringhil_core::driver::{DriverContext, DriverRegistry};
use ringhil_core::metrics::{RunSummary, SUMMARY_CSV_COLUMNS};
use ringhil_core::scenario::ScenarioFile;

fn ringhil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ringhil")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn short_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(
        &path,
        r#"{
            "label": "short",
            "ring": {"horizon_steps": 600, "warmup_steps": 200},
            "policy": {"kind": "equilibrium_heuristic", "margin_mps": 0.5},
            "seeds": [1, 2]
        }"#,
    )
    .unwrap();
    path
}

fn read_rows(path: &Path) -> Vec<RunSummary> {
    csv::Reader::from_path(path).unwrap().deserialize().map(Result::unwrap).collect()
}

#[test]
fn run_writes_logs_and_summary_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ringhil(&["run", "--config", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("seed 1: mean speed"));
        assert!(stdout(&o).contains("wave fraction"));
    }
    let log_a = fs::read(a.join("short-seed1.jsonl")).unwrap();
    assert_eq!(log_a, fs::read(b.join("short-seed1.jsonl")).unwrap());
    let header = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), SUMMARY_CSV_COLUMNS.join(","));
    let rows = read_rows(&a.join("summary.csv"));
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), [1, 2]);
    assert_eq!(rows[0].policy, "equilibrium_heuristic");

    let o = ringhil(&["replay", a.join("short-seed2.jsonl").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "match");
}

#[test]
fn overrides_and_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path());
    let out = dir.path().join("o");
    let o = ringhil(&[
        "run", "--config", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--seed", "9", "--delta", "10", "--range-mph", "2.5", "--n-vehicles", "18", "--noise", "0.1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&out.join("summary.csv"));
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.seed, r.delta, r.range_mph, r.n_vehicles, r.accel_noise_std), (9, Some(10), Some(2.5), 18, 0.1));
}

#[test]
fn replay_reports_tamper_tick_and_version_errors() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path());
    let out = dir.path().join("o");
    assert!(ringhil(&["run", "--config", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "1"]).status.success());
    let text = fs::read_to_string(out.join("short-seed1.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();

    // line 0 is the header, so tick k sits on line k + 1
    let mut tick: serde_json::Value = serde_json::from_str(&lines[345]).unwrap();
    let speed = &mut tick["vehicles"][3]["speed_mps"];
    *speed = serde_json::json!(f64::from_bits(speed.as_f64().unwrap().to_bits() ^ 1));
    let tampered = dir.path().join("tampered.jsonl");
    let mut edited = lines.clone();
    edited[345] = tick.to_string();
    fs::write(&tampered, edited.join("\n") + "\n").unwrap();
    let o = ringhil(&["replay", tampered.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("divergence at tick 344"), "{}", stdout(&o));

    let mut header: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    header["protocol_version"] = serde_json::json!(99);
    lines[0] = header.to_string();
    let wrong = dir.path().join("wrong.jsonl");
    fs::write(&wrong, lines.join("\n") + "\n").unwrap();
    let o = ringhil(&["replay", wrong.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}

#[test]
fn sweep_runs_grid_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path());
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"n_vehicles": [18, 22, 26]}"#).unwrap();
    let out = dir.path().join("sweep");
    let args = ["sweep", "--config", scenario.to_str().unwrap(), "--grid", grid.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "1"];
    let o = ringhil(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&out.join("sweep.csv"));
    let mut n: Vec<usize> = rows.iter().map(|r| r.n_vehicles).collect();
    n.sort();
    assert_eq!(n, [18, 22, 26]);

    // an interrupted append leaves a partial line; resume drops it and adds nothing twice
    let csv_path = out.join("sweep.csv");
    let mut text = fs::read_to_string(&csv_path).unwrap();
    let last = text.trim_end().rfind('\n').unwrap();
    text.truncate(last + 20);
    fs::write(&csv_path, &text).unwrap();
    assert!(ringhil(&args).status.success());
    let again = read_rows(&csv_path);
    assert_eq!(again.len(), 3);
    let mut sorted = again.clone();
    sorted.sort_by_key(|r| r.n_vehicles);
    let mut before = rows.clone();
    before.sort_by_key(|r| r.n_vehicles);
    assert_eq!(sorted, before);
}

#[test]
fn one_point_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path());
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"delta": [50]}"#).unwrap();
    let (s, r) = (dir.path().join("s"), dir.path().join("r"));
    let cfg = scenario.to_str().unwrap();
    assert!(ringhil(&["sweep", "--config", cfg, "--grid", grid.to_str().unwrap(), "--out", s.to_str().unwrap(), "--seed", "2"]).status.success());
    assert!(ringhil(&["run", "--config", cfg, "--out", r.to_str().unwrap(), "--seed", "2"]).status.success());
    let mut swept = read_rows(&s.join("sweep.csv")).remove(0);
    let ran = read_rows(&r.join("summary.csv")).remove(0);
    assert_eq!(swept.label, "delta=50,seed=2");
    swept.label = ran.label.clone();
    assert_eq!(swept, ran);
}

#[test]
fn empty_grid_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"range_mph": []}"#).unwrap();
    let o = ringhil(&["sweep", "--grid", grid.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no values"));
}

#[test]
fn trained_policy_reloads_and_reproduces_its_reward() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("train.json");
    fs::write(&scenario, r#"{"ring": {"horizon_steps": 500, "warmup_steps": 200}, "seeds": [0, 1]}"#).unwrap();
    let policy = dir.path().join("policy.json");
    let o = ringhil(&[
        "train", "--config", scenario.to_str().unwrap(), "--out", policy.to_str().unwrap(),
        "--iterations", "3", "--population", "6", "--policy", "linear", "--init-std", "0.1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let file = PolicyFile::load(&policy).unwrap();
    assert_eq!(file.kind, "linear");
    assert!(file.trained_at.is_some());

    let curve: Vec<IterationStats> =
        csv::Reader::from_path(policy.with_extension("rewards.csv")).unwrap().deserialize().map(Result::unwrap).collect();
    assert_eq!(curve.len(), 3);
    let best = curve[2].best_reward;

    let mut s = ScenarioFile::load(&scenario).unwrap();
    s.policy_file = Some(policy.clone());
    let registry = ringhil_core::advisory::PolicyRegistry::builtin();
    let reloaded = s.build_policy(&registry).unwrap().unwrap();
    let mut env = s.training_env();
    env.collision_penalty = 10.0;
    let driver = DriverRegistry::builtin()
        .build(&s.driver, &DriverContext { dt_s: s.ring.dt_s, bounds: ringhil_core::advisory::ActionBounds::for_idm(&s.idm) })
        .unwrap();
    assert_eq!(env.score(reloaded.as_ref(), driver.as_ref()), best);
}

#[test]
fn bad_input_exits_nonzero() {
    let o = ringhil(&["run", "--config", "/nonexistent/scenario.json", "--out", "/tmp/x"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}
