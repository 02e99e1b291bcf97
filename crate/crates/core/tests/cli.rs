use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sibath::experiments::{read_sweep_csv, CSV_COLUMNS};
use tempfile::TempDir;

fn sibath(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sibath"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn sibath")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = sibath(out, args);
    assert!(
        o.status.success(),
        "{args:?} exited {:?}\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn manifest(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&read(path)).unwrap()
}

const SMALL_ANGLE: &[&str] = &["sweep-angle", "--n-configs", "6", "--set", "angle_points=5"];

#[test]
fn sweep_angle_is_byte_identical_across_workers_and_reruns() {
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    ok(dirs[0].path(), &[SMALL_ANGLE, &["--workers", "1"]].concat());
    ok(dirs[1].path(), &[SMALL_ANGLE, &["--workers", "3"]].concat());
    let first = read(dirs[0].path().join("sweep_angle.csv"));
    assert_eq!(first, read(dirs[1].path().join("sweep_angle.csv")));

    // replay from the manifest alone, with yet another worker count
    let m = dirs[1].path().join("sweep_angle.manifest.json");
    ok(dirs[2].path(), &["sweep-angle", "--config", m.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(first, read(dirs[2].path().join("sweep_angle.csv")));

    let rows = read_sweep_csv(first.as_slice()).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0].sweep_value, 0.0);
    assert_eq!(rows[0].mean, 0.0);
    assert!(rows.iter().all(|r| r.n_configs == 6 && r.master_seed == 20_240_601));
}

#[test]
fn manifest_schema() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &[SMALL_ANGLE, &["--seed", "7", "--bx", "80mT"]].concat());
    let m = manifest(dir.path().join("sweep_angle.manifest.json"));
    for key in [
        "manifest_version",
        "tool_version",
        "subcommand",
        "master_seed",
        "config",
        "started_at",
        "finished_at",
        "runtime_s",
        "outputs",
        "summary",
    ] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(m["manifest_version"], 1);
    assert_eq!(m["subcommand"], "sweep-angle");
    assert_eq!(m["master_seed"], 7);
    assert_eq!(m["config"]["master_seed"], 7);
    assert_eq!(m["config"]["b_x"].as_f64().unwrap(), 0.08);
    assert_eq!(m["config"]["readout"], "normalized");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 1);
    let csv = read(dir.path().join("sweep_angle.csv"));
    let header = String::from_utf8(csv).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, CSV_COLUMNS.join(","));
}

#[test]
fn sweep_concentration_and_dump_bath_are_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["sweep-concentration", "--n-configs", "4", "--set", "concentrations=[\"400ppm\",\"1600ppm\"]"];
    ok(a.path(), &[&args[..], &["--workers", "1"]].concat());
    ok(b.path(), &[&args[..], &["--workers", "2"]].concat());
    let csv = read(a.path().join("sweep_concentration.csv"));
    assert_eq!(csv, read(b.path().join("sweep_concentration.csv")));
    let rows = read_sweep_csv(csv.as_slice()).unwrap();
    assert_eq!(rows.iter().map(|r| r.sweep_value).collect::<Vec<_>>(), vec![400e-6, 1600e-6]);

    ok(a.path(), &["dump-bath", "--n-configs", "3"]);
    ok(b.path(), &["dump-bath", "--n-configs", "3", "--workers", "2"]);
    for i in 0..3 {
        let name = format!("bath_{i:04}.csv");
        assert_eq!(read(a.path().join(&name)), read(b.path().join(&name)));
    }
    let m = manifest(a.path().join("dump_bath.manifest.json"));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn sweep_sequence_with_trace_then_budget_from_it() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["sweep-sequence", "--n-configs", "3", "--set", "sequence_lengths=[1,4,12]", "--trace-placement", "1"];
    ok(a.path(), &[&args[..], &["--workers", "1"]].concat());
    ok(b.path(), &[&args[..], &["--workers", "3"]].concat());
    for f in ["sweep_sequence.csv", "sweep_sequence_trace.csv"] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f}");
    }
    let trace = String::from_utf8(read(a.path().join("sweep_sequence_trace.csv"))).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "gate_index,clock_s,dE_over_kT,w_norm_accum");
    assert_eq!(lines.count(), 12);

    let seq = a.path().join("sweep_sequence.csv");
    ok(a.path(), &["budget", "--capacity", "100uW", "--sequence-csv", seq.to_str().unwrap()]);
    let budget = String::from_utf8(read(a.path().join("budget.csv"))).unwrap();
    let header: Vec<&str> = budget.lines().next().unwrap().split(',').collect();
    assert_eq!(
        header,
        [
            "weak_gate_rate_per_s",
            "per_gate_J",
            "per_gate_over_kT",
            "clamped",
            "capacity_W",
            "qubit_count",
            "total_ops_per_s",
            "per_qubit_ops_per_s"
        ]
    );
}

#[test]
fn budget_with_explicit_energy() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["budget", "--capacity", "100uW", "--per-gate-joules", "1e-28J", "--qubits", "1000"]);
    let m = manifest(dir.path().join("budget.manifest.json"));
    let rate = m["summary"]["weak_gate_rate_per_s"].as_f64().unwrap();
    assert!((5e3..=5e4).contains(&rate), "{rate}");
    let total = m["summary"]["total_ops_per_s"].as_f64().unwrap();
    assert!((total / 1e24 - 1.0).abs() < 1e-12, "{total}");
    let per_qubit = m["summary"]["per_qubit_ops_per_s"].as_f64().unwrap();
    assert!((per_qubit / 1e21 - 1.0).abs() < 1e-12, "{per_qubit}");
}

#[test]
fn oracle_check_single_coupling() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["oracle-check", "--coupling", "1MHz"]);
    let text = String::from_utf8(read(dir.path().join("oracle_check.csv"))).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "coupling_MHz,bath_state,angle,dyson_dE_over_kT,exact_dE_over_kT,relative_difference,overlap,w_norm,sign_agrees"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",true")), "{rows:?}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let o = sibath(dir.path(), &["sweep-angle", "--set", "temprature=0.3"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("did you mean `temperature`"), "{err}");

    // a weak drive cannot run the strong-regime sweep
    let o = sibath(dir.path(), &["sweep-angle", "--bx", "1mT", "--n-configs", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let o = sibath(dir.path(), &["sweep-angle", "--readout", "median"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("normalized"));

    let o = sibath(dir.path(), &["budget", "--capacity", "100uW"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_mismatched_csv_is_rejected_by_column_name() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "sweep_value,mean_dE_over_kT,spread\n1,0.1,0\n").unwrap();
    let o = sibath(dir.path(), &["budget", "--capacity", "1uW", "--sequence-csv", bad.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("min_dE_over_kT") && err.contains("spread"), "{err}");
}
