//! Acceptance run: criteria 1–8 on the full configuration at its stated
//! tolerances, then the end-to-end smoke run of the binary. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use varlex_harness::config::{ExperimentConfig, Tolerances, Trials};
use varlex_harness::report::VerificationReport;
use varlex_harness::suites;

const NAMES: [&str; 9] = [
    "constant-exponent collapse",
    "modular bounds and Holder with constant 4",
    "trivial-weight identity",
    "averaging-operator upper bound",
    "stopping-cube exactness and sparse domination",
    "shifted-dyadic cover",
    "matrix sandwich, two paths and factor 4",
    "scalar reductions of matrix weights",
    "end-to-end smoke run",
];

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn line(k: usize, ok: bool, detail: &str) -> bool {
    println!("{} criterion {k}: {} ({detail})", if ok { "PASS" } else { "FAIL" }, NAMES[k - 1]);
    ok
}

fn failing_checks(report: &VerificationReport, k: u8) -> String {
    let ids: Vec<&str> = report.checks.iter().filter(|c| c.criterion == Some(k) && !c.passed()).map(|c| c.id.as_str()).collect();
    if ids.is_empty() {
        "all checks pass".into()
    } else {
        format!("failing: {}", ids.join(", "))
    }
}

fn main() {
    let mut cfg = ExperimentConfig::load(&configs().join("full.json")).expect("full config loads");
    cfg.apply_env().expect("seed override parses");
    assert_eq!(cfg.tolerances, Tolerances::default(), "acceptance runs at the stated tolerances");
    assert_eq!(cfg.trials, Trials::default(), "acceptance runs at the stated trial counts");

    let report = suites::run(&cfg);
    let mut all = true;
    for k in 1..=8u8 {
        let ok = report.criterion_passed(k).unwrap_or(false);
        let mut detail = failing_checks(&report, k);
        let mut ok = ok;
        if k == 1 {
            let ms = report.checks.iter().filter(|c| c.criterion == Some(1)).map(|c| c.runtime_ms).fold(0.0, f64::max);
            ok &= ms < 5_000.0;
            detail = format!("{detail}; {:.2} s", ms / 1e3);
        }
        all &= line(k as usize, ok, &detail);
    }

    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_varlex"))
        .args(["verify", "--config"])
        .arg(configs().join("smoke.json"))
        .output()
        .expect("binary runs");
    let secs = start.elapsed().as_secs_f64();
    let ok = out.status.code() == Some(0) && secs < 60.0;
    all &= line(9, ok, &format!("exit {:?}, {secs:.1} s", out.status.code()));
    if !ok {
        eprintln!("{}", String::from_utf8_lossy(&out.stdout));
    }

    if !all {
        std::process::exit(1);
    }
}
