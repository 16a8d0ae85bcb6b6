use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Warn => "warn",
            Status::Fail => "fail",
        })
    }
}

/// Outcome of one numerical check.
///
/// A check only fails when it is assertable; diagnostic checks that exceed
/// their tolerance are reported as warnings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub name: String,
    /// The headline measured quantity compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub status: Status,
    pub assertable: bool,
    /// Secondary measurements, by name.
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    /// Echo of the settings the check ran with.
    pub config: serde_json::Value,
}

impl VerificationReport {
    pub fn new(name: impl Into<String>, value: f64, tolerance: f64, assertable: bool) -> Self {
        let status = if value.abs() <= tolerance {
            Status::Pass
        } else if assertable {
            Status::Fail
        } else {
            Status::Warn
        };
        Self {
            name: name.into(),
            value,
            tolerance,
            status,
            assertable,
            details: BTreeMap::new(),
            notes: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    pub fn detail(mut self, key: impl Into<String>, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    /// Downgrades a pass to a warning, e.g. when a side condition of the
    /// check is not met.
    pub fn warn(mut self, note: impl Into<String>) -> Self {
        if self.status == Status::Pass {
            self.status = Status::Warn;
        }
        self.notes.push(note.into());
        self
    }

    /// Re-tags the check and recomputes its status.
    pub fn assertable(mut self, assertable: bool) -> Self {
        self.assertable = assertable;
        if self.status != Status::Pass {
            self.status = if assertable { Status::Fail } else { Status::Warn };
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}
