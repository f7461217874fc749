//! Verification reports: one record per check, serialized as JSON and CSV.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// Measured and recorded, not asserted.
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub id: String,
    /// The statement being checked.
    pub anchor: String,
    /// Acceptance criterion the check belongs to, if any.
    pub criterion: Option<u8>,
    pub status: Status,
    pub measured: BTreeMap<String, f64>,
    pub tolerance: Option<f64>,
    /// Distance to the asserted bound; negative when violated.
    pub slack: Option<f64>,
    pub detail: Option<String>,
    pub runtime_ms: f64,
}

impl CheckRecord {
    pub fn new(id: &str, anchor: &str, criterion: Option<u8>) -> Self {
        Self {
            id: id.to_string(),
            anchor: anchor.to_string(),
            criterion,
            status: Status::Report,
            measured: BTreeMap::new(),
            tolerance: None,
            slack: None,
            detail: None,
            runtime_ms: 0.0,
        }
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.measured.insert(key.to_string(), v);
        self
    }

    pub fn tolerance(mut self, t: f64) -> Self {
        self.tolerance = Some(t);
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }

    /// Asserts `measured ≤ bound`, recording the slack.
    pub fn assert_le(mut self, measured: f64, bound: f64) -> Self {
        let slack = bound - measured;
        self.slack = Some(slack);
        self.status = if slack >= 0.0 { Status::Pass } else { Status::Fail };
        self
    }

    /// Asserts a condition whose slack is a count of violations.
    pub fn assert_count(mut self, violations: usize) -> Self {
        self.slack = Some(0.0 - violations as f64);
        self.status = if violations == 0 { Status::Pass } else { Status::Fail };
        self
    }

    pub fn fail(mut self, reason: impl Into<String>) -> Self {
        self.status = Status::Fail;
        self.detail = Some(reason.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Runs `f`, stamping its runtime on the records it returns. Errors become a
/// single failing record.
pub fn timed(id: &str, anchor: &str, criterion: Option<u8>, f: impl FnOnce() -> anyhow::Result<Vec<CheckRecord>>) -> Vec<CheckRecord> {
    let start = Instant::now();
    let mut recs = match f() {
        Ok(r) => r,
        Err(e) => vec![CheckRecord::new(id, anchor, criterion).fail(format!("{e:#}"))],
    };
    let ms = start.elapsed().as_secs_f64() * 1e3;
    for r in &mut recs {
        r.runtime_ms = ms;
    }
    recs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema: u32,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
    pub passed: bool,
    pub runtime_s: f64,
}

impl VerificationReport {
    pub fn new(seed: u64, checks: Vec<CheckRecord>, runtime_s: f64) -> Self {
        let passed = checks.iter().all(CheckRecord::passed);
        Self {
            schema: crate::config::SCHEMA_VERSION,
            seed,
            checks,
            passed,
            runtime_s,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn criterion_passed(&self, criterion: u8) -> Option<bool> {
        let mut any = false;
        let mut ok = true;
        for c in self.checks.iter().filter(|c| c.criterion == Some(criterion)) {
            any = true;
            ok &= c.passed();
        }
        any.then_some(ok)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per check; measured values are `key=value` pairs joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,criterion,status,anchor,tolerance,slack,runtime_ms,measured\n");
        for c in &self.checks {
            let measured: Vec<String> = c.measured.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.3},{}\n",
                csv_field(&c.id),
                c.criterion.map(|k| k.to_string()).unwrap_or_default(),
                serde_json::to_value(c.status).expect("status").as_str().expect("string"),
                csv_field(&c.anchor),
                opt(c.tolerance),
                opt(c.slack),
                c.runtime_ms,
                csv_field(&measured.join(";")),
            ));
        }
        out
    }

    /// Human-readable summary, one line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Report => "INFO",
            };
            let slack = c.slack.map(|s| format!(" slack={s:.3e}")).unwrap_or_default();
            let detail = c.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default();
            out.push_str(&format!("{tag} {}{slack}{detail}\n", c.id));
        }
        let n_fail = self.failures().count();
        out.push_str(&format!("{} checks, {} failed, {:.1} s\n", self.checks.len(), n_fail, self.runtime_s));
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_status() {
        let checks = vec![
            CheckRecord::new("a", "x, y", Some(1)).value("v", 1.5).assert_le(1.0, 2.0),
            CheckRecord::new("b", "z", None).assert_count(2),
        ];
        let r = VerificationReport::new(1, checks, 0.0);
        assert!(!r.passed);
        assert_eq!(r.criterion_passed(1), Some(true));
        assert_eq!(r.criterion_passed(2), None);
        let csv = r.to_csv();
        assert!(csv.contains("\"x, y\"") && csv.contains(",fail,"));
        let back: VerificationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
