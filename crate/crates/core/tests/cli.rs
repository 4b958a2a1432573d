use std::path::Path;
use std::process::Command;

use decoherence_loops::experiment::{parse_spec, validate, ExperimentSpec};
use serde_json::Value;

fn decoloops(spec: &Path, extra: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_decoloops"))
        .arg("--spec")
        .arg(spec)
        .args(extra)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_spec(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const MC_SCAN: &str = r#"{
  "command": "mc-scan",
  "params": {
    "lattice": "honeycomb",
    "sizes": [[4, 4], [6, 6]],
    "model": {"kind": "topological", "n": 1.0},
    "t_grid": [0.45, 0.55, 0.65],
    "eq_sweeps": 200,
    "measure_sweeps": 400
  },
  "output": "unused",
  "seed": {"policy": "derived", "base": 11},
  "workers": 2
}"#;

#[test]
fn mc_scan_writes_versioned_csv_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "mc.json", MC_SCAN);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(decoloops(&spec, &["--out", a.to_str().unwrap()]).0, 0);
    assert_eq!(
        decoloops(&spec, &["--out", b.to_str().unwrap(), "--workers", "1"]).0,
        0
    );
    let csv_a = std::fs::read_to_string(a.join("results.csv")).unwrap();
    let csv_b = std::fs::read_to_string(b.join("results.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let mut lines = csv_a.lines();
    assert_eq!(lines.next(), Some("#schema=1"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    for col in [
        "lattice",
        "N",
        "t",
        "size_x",
        "size_y",
        "seed",
        "mean_length",
        "var_length_norm",
        "binder_Q",
        "q_err",
        "acceptance",
    ] {
        assert!(header.contains(&col), "missing column {col}");
    }
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    // every row carries its seed; derived seeds are distinct
    let seed_col = header.iter().position(|&c| c == "seed").unwrap();
    let mut seeds: Vec<&str> = rows.iter().map(|r| r.split(',').nth(seed_col).unwrap()).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 6);

    let m = read_json(&a.join("manifest.json"));
    assert_eq!(m["command"], "mc-scan");
    assert_eq!(m["failed"], 0);
    assert_eq!(m["tasks"].as_array().unwrap().len(), 6);
    assert!(m["tasks"][0]["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    // the echoed spec reflects the overrides and parses back
    let echoed: ExperimentSpec = serde_json::from_value(m["spec"].clone()).unwrap();
    assert_eq!(echoed.output, a);
    assert_eq!(echoed.workers, 2);
    let s = read_json(&a.join("summary.json"));
    assert!(s["crossings"].is_array());
}

#[test]
fn seed_flag_changes_payload() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "mc.json", MC_SCAN);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    decoloops(&spec, &["--out", a.to_str().unwrap()]);
    decoloops(&spec, &["--out", b.to_str().unwrap(), "--seed", "12"]);
    assert_ne!(
        std::fs::read_to_string(a.join("results.csv")).unwrap(),
        std::fs::read_to_string(b.join("results.csv")).unwrap()
    );
}

#[test]
fn oracle_check_reports_all_mappings() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let spec = write_spec(
        tmp.path(),
        "o.json",
        &format!(
            r#"{{"command": "oracle-check", "params": {{"sizes": [[2, 2]]}}, "output": {:?}}}"#,
            out
        ),
    );
    assert_eq!(decoloops(&spec, &[]).0, 0);
    let reports = read_json(&out.join("results.json"));
    let reports = reports.as_array().unwrap();
    // ising, rbim, face cubic N=1..3, mixed cubic N=1,2
    assert_eq!(reports.len(), 7);
    let mut mappings: Vec<&str> = reports.iter().map(|r| r["mapping"].as_str().unwrap()).collect();
    mappings.dedup();
    assert_eq!(mappings, ["ising-dual", "rbim", "face-cubic", "mixed-cubic"]);
    for r in reports {
        for k in ["mapping", "lattice", "params", "lhs", "rhs", "relative_error"] {
            assert!(r.get(k).is_some());
        }
        assert!(r["relative_error"].as_f64().unwrap() < 1e-10);
    }
}

#[test]
fn partial_failure_exits_3_with_task_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    // the 4x4 mixed cubic sum at N=2 passes validation but exceeds the enumeration cap
    let spec = write_spec(
        tmp.path(),
        "o.json",
        &format!(
            r#"{{"command": "oracle-check",
                "params": {{"mappings": ["mixed-cubic"], "sizes": [[2, 2], [4, 4]], "mixed_cubic_n": [2]}},
                "output": {:?}}}"#,
            out
        ),
    );
    let (code, stderr) = decoloops(&spec, &[]);
    assert_eq!(code, 3, "{stderr}");
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["failed"], 1);
    assert!(m["tasks"][0]["error"].is_null());
    assert!(m["tasks"][1]["error"].as_str().unwrap().contains("cap"));
    assert_eq!(read_json(&out.join("results.json")).as_array().unwrap().len(), 1);
}

#[test]
fn validation_rejects_and_reports_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let spec = write_spec(
        tmp.path(),
        "bad.json",
        &format!(
            r#"{{"command": "spectrum", "params": {{"kind": "toric", "size": [2, 2], "p_grid": [0.7, 0.1, -0.1]}},
                "output": {:?}, "workers": 0}}"#,
            out
        ),
    );
    let (code, stderr) = decoloops(&spec, &["--validate-only"]);
    assert_eq!(code, 2);
    assert_eq!(stderr.lines().filter(|l| l.starts_with("invalid")).count(), 3);
    // a plain run validates first and never executes
    assert_eq!(decoloops(&spec, &[]).0, 2);
    assert!(!out.exists());
    // the worker override repairs one of the three
    let (_, stderr) = decoloops(&spec, &["--validate-only", "--workers", "2"]);
    assert_eq!(stderr.lines().count(), 2);
}

#[test]
fn super_honeycomb_divisibility_rule() {
    let body = |lx: usize| {
        format!(
            r#"{{"command": "kitaev-mc", "params": {{"sizes": [[{lx}, 4]], "kappa": 0.2,
                "variant": "wavefunction", "t_grid": [0.8]}}, "output": "x"}}"#
        )
    };
    let bad = parse_spec(&body(5)).unwrap();
    let d = validate(&bad);
    assert_eq!(d.len(), 1);
    assert!(d[0].message.contains("divisible by 6"));
    assert!(validate(&parse_spec(&body(6)).unwrap()).is_empty());
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "k.json", &body(5));
    assert_eq!(decoloops(&spec, &["--validate-only"]).0, 2);
}

#[test]
fn unparsable_spec_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "x.json", r#"{"command": "warp-drive", "output": "x"}"#);
    assert_eq!(decoloops(&spec, &["--validate-only"]).0, 2);
    let missing = tmp.path().join("missing.json");
    assert_eq!(decoloops(&missing, &[]).0, 2);
}

#[test]
fn well_formed_specs_validate_cleanly() {
    for body in [
        r#"{"command": "oracle-check", "params": {}, "output": "x"}"#,
        r#"{"command": "kitaev-extract", "params": {"lx": 24, "ly": 6, "kappas": [0.2]}, "output": "x"}"#,
        r#"{"command": "qd-overlap", "params": {"group": "Z2", "g": "1"}, "output": "x"}"#,
        r#"{"command": "spectrum", "params": {"kind": "eta-maximal", "lattice": "honeycomb", "size": [2, 2], "t_a": 0.5, "d_a": 2.0}, "output": "x"}"#,
        r#"{"command": "fidelity-check", "params": {"instances": 3}, "output": "x", "seed": {"policy": "fixed", "seed": 4}}"#,
    ] {
        let spec = parse_spec(body).unwrap();
        assert!(validate(&spec).is_empty(), "{body}");
        let again = parse_spec(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(again, spec);
    }
}

#[test]
fn qd_overlap_and_weight_table_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("q");
    let spec = write_spec(
        tmp.path(),
        "q.json",
        &format!(
            r#"{{"command": "qd-overlap", "params": {{"group": "Z2", "g": "1", "window": [2, 1]}},
                "output": {:?},
                "weight_table": {{"lattice": "honeycomb", "size": [2, 2],
                                  "model": {{"kind": "topological", "n": 2.0}}, "t": 0.5, "windings": true}}}}"#,
            out
        ),
    );
    assert_eq!(decoloops(&spec, &[]).0, 0);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 3);
    let weights = std::fs::read_to_string(out.join("weights.csv")).unwrap();
    let mut lines = weights.lines();
    assert_eq!(lines.next(), Some("#schema=1"));
    assert_eq!(lines.next(), Some("loop,length,cyclomatic,value,sign"));
    // every even subgraph of the 2x2 honeycomb torus: 2^(E - V + 1) = 2^5
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 32);
    assert_eq!(rows[0], ["", "0", "0", "1.0", "1"]);
    for r in &rows {
        let (len, c): (i32, i32) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        let v: f64 = r[3].parse().unwrap();
        assert!((v - 0.5f64.powi(len) * 2f64.powi(c)).abs() < 1e-12);
    }
}
