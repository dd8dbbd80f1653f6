//! Metric reports as flat key-value text and JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::fsutil::PendingFiles;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn set(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metrics {
            writeln!(out, "{k} = {v}").unwrap();
        }
        for n in &self.notes {
            writeln!(out, "# {n}").unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Malformed(format!("report: {e}")))
    }

    /// Queues `<json_path>` and the text twin with a `.txt` extension.
    pub fn stage(&self, pending: &mut PendingFiles, json_path: &Path) -> Result<(), CliError> {
        if self.metrics.values().any(|v| !v.is_finite()) {
            return Err(CliError::Numeric("report contains a non-finite metric".into()));
        }
        pending.add(json_path, self.to_json().as_bytes())?;
        pending.add(&json_path.with_extension("txt"), self.to_text().as_bytes())?;
        Ok(())
    }
}
