use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn varlex(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_varlex"));
    cmd.args(args).env_remove("VARLEX_SEED");
    if let Some(s) = seed {
        cmd.env("VARLEX_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.display().to_string()
}

fn tiny_config() -> Value {
    json!({
        "schema": 1, "seed": 11, "grid": {"n": 1, "L": 1.0, "N": 64},
        "alpha": 0.25, "m": 1, "d": 2, "depth": 3, "probes": 2,
        "exponents": [{"kind": "sine", "base": 2.5, "amplitude": 0.3, "frequency": 2.0}],
        "weights": [{"kind": "random-log-uniform", "spread": 0.5}],
        "trials": {"collapse": 3, "modular": 5, "holder": 5, "product": 2, "dual": 2, "vweight": 2,
                   "averaging": 2, "maximal": 1, "cz": 2, "matrix": 1, "matrix_scalar": 1},
        "matrix": {"cells": 16, "depth": 2},
        "cz": {"cells": 64},
        "cover": {"coarse": 32, "fine": 64}
    })
}

fn report_values(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("runtime_s");
    for c in v["checks"].as_array_mut().unwrap() {
        c.as_object_mut().unwrap().remove("runtime_ms");
    }
    v
}

#[test]
fn unknown_subcommand_exits_two_with_usage() {
    let out = varlex(&["frobnicate"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn norm_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "f.json", &json!({"n": 1, "L": 1.0, "N": 4, "values": [1.0, 2.0, 2.0, 1.0]}));
    let p = write(dir.path(), "p.json", &json!({"n": 1, "L": 1.0, "N": 4, "values": [2.0, 2.0, 2.0, 2.0]}));
    let out = varlex(&["norm", "--field", &f, "--exponent", &p], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    // (0.5·(1 + 4 + 4 + 1))^{1/2}
    assert!((v["norm"].as_f64().unwrap() - 5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn malformed_config_exits_two_naming_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"schema\": 1,\n  \"seed\": \"x\"\n}").unwrap();
    let out = varlex(&["verify", "--config", p.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");

    let mut cfg = tiny_config();
    cfg["depth"] = json!(9);
    let p = write(dir.path(), "deep.json", &cfg);
    let out = varlex(&["verify", "--config", &p], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth"));
}

#[test]
fn verify_is_deterministic_and_honours_the_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", &tiny_config());
    let run = |name: &str, seed: Option<&str>| {
        let out_path = dir.path().join(name);
        let csv = dir.path().join(format!("{name}.csv"));
        let out = varlex(&["verify", "--config", &cfg, "--out", out_path.to_str().unwrap(), "--csv", csv.to_str().unwrap()], seed);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
        assert!(std::fs::read_to_string(csv).unwrap().starts_with("id,criterion,status"));
        report_values(&out_path)
    };
    let a = run("a.json", None);
    let b = run("b.json", Some("11"));
    assert_eq!(a, b);
    let c = run("c.json", Some("12"));
    assert_eq!(c["seed"], json!(12));
    assert_ne!(a["checks"], c["checks"]);

    let out = varlex(&["report", "--input", dir.path().join("a.json").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS lebesgue.constant-collapse"));
}

#[test]
fn matw_and_apply_op_run_on_small_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let n = 8;
    let blocks: Vec<f64> = (0..n).flat_map(|i| [2.0 + i as f64 * 0.1, 0.3, 0.3, 1.0]).collect();
    let w = write(dir.path(), "w.json", &json!({"n": 1, "L": 1.0, "N": n, "d": 2, "values": blocks}));
    let p = write(dir.path(), "p.json", &json!({"n": 1, "L": 1.0, "N": n, "values": vec![2.0; n]}));
    let out = varlex(&["matw", "direct", "--weight", &w, "--exponent", &p, "--depth", "2"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let direct: Value = serde_json::from_slice(&out.stdout).unwrap();
    let out = varlex(&["matw", "reduce", "--weight", &w, "--exponent", &p, "--cube", "1,0"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let red: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(red["sandwich"].as_f64().unwrap() <= 2f64.sqrt() * 1.02);
    assert!(direct["constant"].as_f64().unwrap() >= 1.0 - 1e-12);

    let f = write(dir.path(), "f.json", &json!({"n": 1, "L": 1.0, "N": n, "values": [0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 1.0]}));
    let out_field = dir.path().join("m.json");
    let out = varlex(
        &["apply-op", "--op", "fractional-maximal", "--field", &f, "--depth", "3", "--out", out_field.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out_field).unwrap()).unwrap();
    // the cell holding 3 sees its own average 3 at the finest level
    assert_eq!(m["values"][4], json!(3.0));
}
