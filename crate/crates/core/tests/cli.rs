use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use straggler_sim::experiment::COMPARISON_HEADER;
use straggler_sim::sim::workload::TRACE_HEADER;

/// Desk-sized but quick: 8 hosts, 6 intervals, two training epochs.
const SMALL: &str = r#"
seed = 11
n_vms = 8
horizon_intervals = 6

[training]
epochs = 2
lr = 1e-3
"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_straggler-sim"));
    cmd.env("STRAGGLER_SIM_LOG", "error");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn setup(toml: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, toml).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn generate_writes_trace_and_manifest() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("gen");
    ok(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(header(&out.join("trace.csv")), TRACE_HEADER);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("generate_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_changes_the_trace() {
    let (dir, cfg) = setup(SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["generate", "--config", s(&cfg), "--out", s(&b), "--seed", "12"]);
    assert_ne!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
}

#[test]
fn train_then_simulate_start() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("run");
    let ckpt = dir.path().join("model.ckpt");
    ok(&[
        "train", "--config", s(&cfg), "--out", s(&out), "--checkpoint", s(&ckpt), "--epochs", "3", "--lr", "0.002",
    ]);
    assert_eq!(&fs::read(&ckpt).unwrap()[..8], b"STRTCKPT");
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next().unwrap(), "epoch,train_mse,test_mse");
    assert_eq!(loss.lines().count(), 4);
    assert!(out.join("dataset.csv").exists() && out.join("dataset_labels.csv").exists());

    let stdout = ok(&["simulate", "--config", s(&cfg), "--out", s(&out), "--policy", "start", "--checkpoint", s(&ckpt)]);
    assert!(stdout.contains("energy_total"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("start_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["policy"], "start");
    assert!(manifest["checkpoint_sha256"].is_string());
}

#[test]
fn start_without_checkpoint_fails() {
    let (dir, cfg) = setup(SMALL);
    let missing = dir.path().join("nope.ckpt");
    let out = dir.path().join("never");
    let err = fail(&["simulate", "--config", s(&cfg), "--out", s(&out), "--policy", "start", "--checkpoint", s(&missing)]);
    assert!(err.contains("checkpoint"), "{err}");
    assert!(!out.exists());
}

#[test]
fn simulate_is_byte_identical_across_invocations() {
    let (dir, cfg) = setup(SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--config", s(&cfg), "--out", s(out), "--policy", "reactive"]);
    }
    let csv = |d: &Path| fs::read(d.join("reactive_series.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
}

#[test]
fn one_interval_horizon_gives_one_row() {
    let (dir, cfg) = setup(&SMALL.replace("horizon_intervals = 6", "horizon_intervals = 1"));
    let out = dir.path().join("one");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out), "--policy", "none"]);
    let text = fs::read_to_string(out.join("none_series.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("interval_index,energy,contention,"));
}

#[test]
fn compare_writes_table_and_evaluate_accepts_reports() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("cmp");
    ok(&["compare", "--config", s(&cfg), "--out", s(&out), "--policy", "none,reactive,dolly", "--f1-as-printed"]);
    let table = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), COMPARISON_HEADER.join(","));
    let policies: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(policies, ["none", "reactive", "dolly"]);

    let report = out.join("dolly").join("dolly_report.json");
    let series = out.join("dolly").join("dolly_series.csv");
    ok(&["evaluate", s(&report)]);
    ok(&["evaluate", s(&report), "--series", s(&series)]);

    let text = fs::read_to_string(&series).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[1] = "1".into();
    lines[1] = cells.join(",");
    let tampered = dir.path().join("tampered.csv");
    fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let err = fail(&["evaluate", s(&report), "--series", s(&tampered)]);
    assert!(err.contains("differ"), "{err}");
}

#[test]
fn compare_rejects_a_single_policy() {
    let (_dir, cfg) = setup(SMALL);
    let err = fail(&["compare", "--config", s(&cfg), "--policy", "none"]);
    assert!(err.contains("at least two"), "{err}");
}

#[test]
fn config_errors_name_the_key() {
    let (_dir, cfg) = setup("n_vms = \"many\"\n");
    let err = fail(&["generate", "--config", s(&cfg)]);
    assert!(err.contains("n_vms"), "{err}");
    let (_dir, cfg) = setup("[workload]\nbogus = 1\n");
    let err = fail(&["generate", "--config", s(&cfg)]);
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn unknown_policy_is_rejected() {
    let err = fail(&["simulate", "--policy", "grass"]);
    assert!(err.contains("grass"), "{err}");
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut names = Vec::new();
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = straggler_sim::config::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap();
        names.push(path.file_name().unwrap().to_string_lossy().into_owned());
    }
    names.sort();
    assert_eq!(names, ["desk.toml", "full_scale.toml", "straggler_heavy.toml"]);
}
