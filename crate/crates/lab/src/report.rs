use serde::Serialize;

use crate::config::ExperimentConfig;

/// Acceptance relation of a metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "relation", rename_all = "snake_case")]
pub enum Bound {
    AtMost { limit: f64 },
    AtLeast { limit: f64 },
    Within { target: f64, tolerance: f64 },
    Between { lo: f64, hi: f64 },
}

impl Bound {
    pub fn holds(&self, value: f64) -> bool {
        match *self {
            Bound::AtMost { limit } => value <= limit,
            Bound::AtLeast { limit } => value >= limit,
            Bound::Within { target, tolerance } => (value - target).abs() <= tolerance,
            Bound::Between { lo, hi } => (lo..=hi).contains(&value),
        }
    }

    fn describe(&self) -> String {
        match *self {
            Bound::AtMost { limit } => format!("<= {limit:e}"),
            Bound::AtLeast { limit } => format!(">= {limit:e}"),
            Bound::Within { target, tolerance } => format!("= {target} ± {tolerance}"),
            Bound::Between { lo, hi } => format!("in [{lo:.4}, {hi:.4}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl Metric {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            pass: bound.holds(value),
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, Bound::AtMost { limit })
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, Bound::AtLeast { limit })
    }

    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Self::new(name, value, Bound::Within { target, tolerance })
    }

    pub fn between(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, value, Bound::Between { lo, hi })
    }

    /// A yes/no check recorded as 1 or 0.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} = {:.6e} ({})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.bound.describe()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub metrics: Vec<Metric>,
    pub passed: bool,
    /// Full numeric results of the experiment.
    pub results: serde_json::Value,
    pub duration_s: f64,
    pub artifacts: Vec<Artifact>,
}

impl RunReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// Everything except the wall-clock duration, for reproducibility checks.
    pub fn numeric_fingerprint(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("duration_s");
        v
    }
}
