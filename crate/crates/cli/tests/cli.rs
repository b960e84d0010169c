use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pulseforge_core::noise_bench::predict_parallel_fidelity;
use pulseforge_core::pulse_parallelizer::DeviceConfig;

const TWO_RZX: &str = r#"{"num_qubits": 3, "gates": [
  {"kind": "rzx", "qubits": [0, 1], "params": [1.5707963267948966]},
  {"kind": "rzx", "qubits": [2, 1], "params": [1.5707963267948966]}]}"#;

const PRZX: &str = r#"{"num_qubits": 3, "gates": [
  {"kind": "przx", "qubits": [0, 2, 1], "params": [1.5707963267948966, 1.5707963267948966]}]}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pulseforge"));
    c.env_remove("PULSEFORGE_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_value(out: &Output, key: &str) -> f64 {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {text}"));
    line.split('=').nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap()
}

fn csv_row(text: &str, key: &str) -> Vec<String> {
    text.lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no row {key}"))
        .split(',')
        .map(String::from)
        .collect()
}

fn device_with(beta: Option<f64>, uniform: bool) -> String {
    let mut cfg = DeviceConfig::belem_like();
    if uniform {
        cfg = cfg.with_uniform_references();
    }
    cfg.beta = beta;
    cfg.to_json().unwrap()
}

#[test]
fn compile_two_rzx_halves_duration() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", TWO_RZX);
    let out = run(&["compile", s(&c)]);
    assert!(out.status.success());
    assert!(stdout_value(&out, "ratio") <= 0.52);
}

#[test]
fn compile_single_gate_ratio_one() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", r#"{"num_qubits": 2, "gates": [{"kind": "rzx", "qubits": [0, 1], "params": [0.7]}]}"#);
    let out = run(&["compile", s(&c)]);
    assert!(out.status.success());
    assert_eq!(stdout_value(&out, "ratio"), 1.0);
}

#[test]
fn compile_writes_schedule_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", TWO_RZX);
    let o = dir.path().join("out");
    let out = run(&["compile", s(&c), "--mode", "serial", "--echo", "--out", s(&o)]);
    assert!(out.status.success());
    let sched = pulseforge_core::pulse_model::Schedule::from_json(&fs::read_to_string(o.join("schedule.json")).unwrap())
        .unwrap();
    assert!(pulseforge_core::pulse_model::validate_schedule(&sched).is_empty());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "compile");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", "{\"num_qubits\": 3,\n \"gates\": [ oops ]}");
    let out = run(&["compile", s(&c)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn missing_file_and_bad_flag_exit_2() {
    assert_eq!(run(&["compile", "/nonexistent/c.json"]).status.code(), Some(2));
    assert_eq!(run(&["compile"]).status.code(), Some(2));
    assert_eq!(run(&["layout", "brisbane", "--depths", "x"]).status.code(), Some(2));
}

#[test]
fn uncalibrated_edge_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", r#"{"num_qubits": 3, "gates": [{"kind": "rzx", "qubits": [0, 2], "params": [0.5]}]}"#);
    assert_eq!(run(&["compile", s(&c)]).status.code(), Some(1));
}

#[test]
fn verify_ideal_without_decay_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", TWO_RZX);
    let d = write(dir.path(), "d.json", &device_with(Some(0.0), false));
    let out = run(&["verify", s(&c), "--device", s(&d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!((stdout_value(&out, "F_S") - 1.0).abs() < 1e-6);
    assert!((stdout_value(&out, "F_P ") - 1.0).abs() < 1e-6);
}

#[test]
fn verify_decay_favours_parallel_and_prediction_is_plumbed() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", TWO_RZX);
    let d = write(dir.path(), "d.json", &device_with(Some(2.0e4), true));
    let o = dir.path().join("v");
    let out = run(&["verify", s(&c), "--device", s(&d), "--out", s(&o)]);
    assert!(out.status.success());
    let text = fs::read_to_string(o.join("verify.csv")).unwrap();
    let t = csv_row(&text, "duration_s");
    let f = csv_row(&text, "fidelity");
    let pred = csv_row(&text, "predicted_parallel");
    let (fs_, fp): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
    assert!(fp > fs_);
    let (ts, tp): (f64, f64) = (t[1].parse().unwrap(), t[2].parse().unwrap());
    let expect = predict_parallel_fidelity(fs_, tp, ts, 0.125).unwrap();
    assert_eq!(pred[2].parse::<f64>().unwrap(), expect);
}

#[test]
fn env_var_selects_device() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", TWO_RZX);
    let text = device_with(Some(1.0), true);
    let d = write(dir.path(), "d.json", &text);
    let o = dir.path().join("o");
    let out = bin().args(["compile", s(&c), "--out", s(&o)]).env("PULSEFORGE_CONFIG", &d).output().unwrap();
    assert!(out.status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["inputs"][1]["path"], s(&d));
}

fn bench_files(dir: &Path, noise: &str) -> (PathBuf, PathBuf, PathBuf) {
    let g = write(dir, "g.json", PRZX);
    let n = write(dir, "noise.json", noise);
    let cb = write(dir, "cb.json", r#"{"depths": [4, 8, 16], "samples_per_depth": 2, "shots": 0, "seed": 3}"#);
    (g, n, cb)
}

fn csv_column(text: &str, col: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == col).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

#[test]
fn bench_noiseless_ratios_are_one() {
    let dir = tempfile::tempdir().unwrap();
    let (g, n, cb) =
        bench_files(dir.path(), r#"{"gate": {"num_qubits": 3, "probabilities": {}}, "twirl": {"num_qubits": 3}}"#);
    let out = run(&["bench", s(&g), "--noise", s(&n), "--cb", s(&cb)]);
    assert!(out.status.success());
    let ratios = csv_column(&String::from_utf8_lossy(&out.stdout), "ratio");
    assert_eq!(ratios.len(), 63);
    assert!(ratios.iter().all(|r| (r - 1.0).abs() < 1e-12));
}

#[test]
fn bench_depolarizing_recovers_eigenvalue() {
    let dir = tempfile::tempdir().unwrap();
    let (g, n, cb) = bench_files(
        dir.path(),
        r#"{"gate": {"num_qubits": 3, "depolarizing": 0.98}, "twirl": {"num_qubits": 3, "depolarizing": 0.995}}"#,
    );
    let out = run(&["bench", s(&g), "--noise", s(&n), "--cb", s(&cb)]);
    assert!(out.status.success());
    let ratios = csv_column(&String::from_utf8_lossy(&out.stdout), "ratio");
    assert!(ratios.iter().all(|r| (r - 0.98).abs() < 1e-9));
}

#[test]
fn bench_non_clifford_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (_, n, cb) =
        bench_files(dir.path(), r#"{"gate": {"num_qubits": 3}, "twirl": {"num_qubits": 3}}"#);
    let g = write(dir.path(), "t.json", r#"{"num_qubits": 3, "gates": [{"kind": "rzx", "qubits": [0, 1], "params": [0.3]}]}"#);
    assert_eq!(run(&["bench", s(&g), "--noise", s(&n), "--cb", s(&cb)]).status.code(), Some(1));
}

#[test]
fn bench_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (g, n, _) = bench_files(
        dir.path(),
        r#"{"gate": {"num_qubits": 3, "depolarizing": 0.99}, "twirl": {"num_qubits": 3}}"#,
    );
    let go = |name: &str, seed: &str| {
        let o = dir.path().join(name);
        let args = ["bench", s(&g), "--noise", s(&n), "--shots", "200", "--depths", "4,8", "--seed", seed, "--out", s(&o)];
        assert!(run(&args).status.success());
        fs::read(&o).unwrap()
    };
    assert_eq!(go("a.csv", "5"), go("b.csv", "5"));
    assert_ne!(go("a.csv", "5"), go("c.csv", "6"));
    assert!(dir.path().join("a.csv.manifest.json").exists());
}

#[test]
fn layout_fragment_gain_and_fig5_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["layout", "brisbane", "--depths", "3"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().nth(1).unwrap(), "3,7,13,6,5,true");
    let full = run(&["layout", "brisbane"]);
    let o = dir.path().join("fd");
    assert!(run(&["export-figdata", "fig5", "--out", s(&o)]).status.success());
    assert_eq!(fs::read(o.join("fig5_gain.csv")).unwrap(), full.stdout);
}

#[test]
fn fig2_and_ptm_bundle_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("fd");
    assert!(run(&["export-figdata", "fig2", "--out", s(&o)]).status.success());
    let tt = fs::read_to_string(o.join("fig2_truth_table.csv")).unwrap();
    assert_eq!(tt.lines().count() - 1, 64);
    for key in ["000,010,", "001,001,", "101,111,"] {
        assert!((csv_row(&tt, key)[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-10);
    }
    assert!(run(&["export-figdata", "ptm", "--out", s(&o)]).status.success());
    let ptm = fs::read_to_string(o.join("ptm_ideal.csv")).unwrap();
    let rows: Vec<&str> = ptm.lines().skip(1).collect();
    assert_eq!(rows.len(), 64);
    assert!(rows.iter().all(|r| r.split(',').count() == 65));
    assert!(o.join("manifest_fig2.json").exists() && o.join("manifest_ptm.json").exists());
}

#[test]
fn fig1_bundle_lists_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("fd");
    assert!(run(&["export-figdata", "fig1", "--out", s(&o)]).status.success());
    let d = fs::read_to_string(o.join("fig1_durations.csv")).unwrap();
    let serial: f64 = csv_row(&d, "serial")[1].parse().unwrap();
    let parallel: f64 = csv_row(&d, "parallel")[1].parse().unwrap();
    assert!(parallel / serial <= 0.52);
    let p = fs::read_to_string(o.join("fig1_pulses.csv")).unwrap();
    assert!(p.lines().any(|l| l.starts_with("parallel,u0_1")));
}
