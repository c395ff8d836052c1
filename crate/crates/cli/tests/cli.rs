//! End-to-end runs of the `walkin` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn walkin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_walkin"))
        .args(args)
        .env("WALKIN_OUT_DIR", dir)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_result_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eq.json");
    let run = walkin(dir.path(), &["solve", "--schedule", "1,3,5", "--lambda", "2", "--out", path_arg(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let result = read_json(&out);
    let p_e = result["p_e"].as_f64().unwrap();
    assert!((p_e - 0.790).abs() <= 0.02, "p_e = {p_e}");
    assert!(result["E_w"].as_f64().unwrap() > 0.0);
    assert_eq!(result["grid"][0].as_array().unwrap().len(), 4);
    assert!(dir.path().join("eq.verify.json").exists());
    let manifest = read_json(&dir.path().join("eq.json.manifest.json"));
    assert_eq!(manifest["command"], "solve");

    let verify = walkin(dir.path(), &["verify", "--input", path_arg(&out), "--out", path_arg(&dir.path().join("v.json"))]);
    assert_eq!(verify.status.code(), Some(0));
    assert!(read_json(&dir.path().join("v.json"))["on_support_max_rel_dev"].as_f64().unwrap() <= 0.02);
}

#[test]
fn usage_and_domain_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["solve", "--schedule", "5,1,3"][..],
        &["solve", "--schedule", "1,3,5", "--lambda", "-1"],
        &["solve", "--bogus"],
        &["sweep", "--delta-grid", "1:0:0.1"],
    ] {
        let run = walkin(dir.path(), args);
        assert_eq!(run.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&run.stderr));
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = walkin(dir.path(), &["verify", "--input", path_arg(&dir.path().join("absent.json"))]);
    assert_eq!(run.status.code(), Some(5));
}

#[test]
fn seeded_simulation_is_reproducible_and_reruns_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = ["simulate", "--schedule", "1,3,5", "--replications", "5000", "--seed", "7"];
    for out in [&a, &b] {
        let mut full = args.to_vec();
        full.extend(["--out", path_arg(out)]);
        assert_eq!(walkin(dir.path(), &full).status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let costs = read_json(&a)["costs"].clone();
    assert_eq!(costs["replications"], 5000);
    assert_eq!(costs["seed"], 7);

    let c = dir.path().join("c.json");
    let manifest = dir.path().join("a.json.manifest.json");
    let rerun = walkin(dir.path(), &["rerun", "--manifest", path_arg(&manifest), "--out", path_arg(&c)]);
    assert_eq!(rerun.status.code(), Some(0), "{}", String::from_utf8_lossy(&rerun.stderr));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn unseeded_simulation_records_its_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let run = walkin(dir.path(), &["simulate", "--replications", "2000", "--out", path_arg(&a)]);
    assert_eq!(run.status.code(), Some(0));
    let manifest = read_json(&dir.path().join("a.json.manifest.json"));
    let seed = manifest["seed"].as_u64().unwrap();
    assert_eq!(read_json(&a)["costs"]["seed"].as_u64(), Some(seed));
    let b = dir.path().join("b.json");
    let rerun = walkin(dir.path(), &["rerun", "--manifest", path_arg(&dir.path().join("a.json.manifest.json")), "--out", path_arg(&b)]);
    assert_eq!(rerun.status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn sweep_writes_one_row_per_pattern_and_spacing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let run = walkin(
        dir.path(),
        &["sweep", "--delta-grid", "0.5:3:0.5", "--replications", "1000", "--seed", "3", "--out", path_arg(&out)],
    );
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "delta,schedule,phi_s,e_w,e_i,phi_g01,phi_g05,phi_g09");
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().any(|r| r.starts_with("2.5,0;2.5;5,")));

    let custom = dir.path().join("g.csv");
    let run = walkin(
        dir.path(),
        &["sweep", "--pattern", "front", "--delta-grid", "1:2:1", "--gamma", "0.3,0.7", "--replications", "500", "--seed", "1", "--out", path_arg(&custom)],
    );
    assert_eq!(run.status.code(), Some(0));
    let text = std::fs::read_to_string(&custom).unwrap();
    assert!(text.starts_with("delta,schedule,phi_s,e_w,e_i,phi_g03,phi_g07\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn grid_optimization_picks_a_short_spacing_for_low_weight() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("opt.json");
    let run = walkin(
        dir.path(),
        &[
            "optimize", "--method", "grid", "--lambda", "2", "--gamma", "0.1", "--delta-grid", "0.4:1.6:0.2",
            "--final-replications", "100000", "--seed", "2024", "--out", path_arg(&out),
        ],
    );
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let doc = read_json(&out);
    let best: Vec<f64> = serde_json::from_value(doc["best_schedule"].clone()).unwrap();
    assert_eq!(best, vec![0.0, 0.6, 1.2]);
    let phi = doc["phi_star"].as_f64().unwrap();
    assert!((phi - 1.6383).abs() <= 0.05 * 1.6383, "phi = {phi}");
}

#[test]
fn de_optimization_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("de.json");
    let run = walkin(
        dir.path(),
        &[
            "optimize", "--gamma", "0.5", "--replications", "500", "--final-replications", "2000", "--population", "6",
            "--max-iterations", "3", "--seed", "5", "--seed-schedule", "0,1.1,2.2", "--out", path_arg(&out),
        ],
    );
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let doc = read_json(&out);
    let trace = doc["trace"].as_array().unwrap();
    assert_eq!(trace.len(), doc["iterations"].as_u64().unwrap() as usize + 1);
    assert_eq!(doc["best_schedule"].as_array().unwrap().len(), 3);
}
