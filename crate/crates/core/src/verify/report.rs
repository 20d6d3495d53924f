use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail(String),
    Skipped(String),
}

impl CheckStatus {
    pub fn is_fail(&self) -> bool {
        matches!(self, CheckStatus::Fail(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail(_) => "fail",
            CheckStatus::Skipped(_) => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    #[serde(flatten)]
    pub status: CheckStatus,
    pub metrics: BTreeMap<String, Value>,
}

impl CheckResult {
    pub fn new(name: &str, status: CheckStatus) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            status,
            metrics: BTreeMap::new(),
        }
    }

    pub fn pass(name: &str) -> CheckResult {
        CheckResult::new(name, CheckStatus::Pass)
    }

    pub fn metric(mut self, key: &str, value: impl Serialize) -> CheckResult {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.metrics.insert(key.to_string(), value);
        self
    }

    pub fn status(mut self, status: CheckStatus) -> CheckResult {
        self.status = status;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractReport {
    pub layer: String,
    pub kind: String,
    pub tolerance: f64,
    pub time: usize,
    pub batch: usize,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl ContractReport {
    /// True iff no check failed.
    pub fn passed(&self) -> bool {
        !self.checks.iter().any(|c| c.status.is_fail())
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.status.is_fail())
            .map(|c| c.name.as_str())
            .collect()
    }

    /// One line per check: `name status [detail] key=value ...`.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "layer {} ({}) batch={} time={} seed={} tolerance={:e}\n",
            self.layer, self.kind, self.batch, self.time, self.seed, self.tolerance
        );
        for c in &self.checks {
            let _ = write!(out, "{:<26} {}", c.name, c.status.label());
            if let CheckStatus::Fail(d) | CheckStatus::Skipped(d) = &c.status {
                let _ = write!(out, " [{d}]");
            }
            for (k, v) in &c.metrics {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let _ = write!(out, " {k}={v}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "result {}", if self.passed() { "pass" } else { "fail" });
        out
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["passed"] = Value::Bool(self.passed());
        v
    }
}
