//! Report tables, verdicts and their on-disk form.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentKind;
use crate::error::{LabError, Result};

/// A CSV table. Cells are preformatted so output is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(name: impl Into<String>, header: Vec<String>) -> Self {
        Self {
            name: name.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

/// Round-trip float formatting.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// A pass/fail outcome of an assertable check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, Value>,
    pub consumed_keys: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest: Manifest,
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    pub fn verdicts(&self) -> &[Verdict] {
        &self.manifest.verdicts
    }

    pub fn passed(&self) -> bool {
        self.manifest.verdicts.iter().all(|v| v.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Writes `manifest.json` and one CSV per table into `dir`, returning the
/// paths in write order.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut written = Vec::with_capacity(report.tables.len() + 1);
    let manifest = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&report.manifest)?;
    text.push('\n');
    fs::write(&manifest, text).map_err(|e| LabError::io(&manifest, e))?;
    written.push(manifest);
    for table in &report.tables {
        let path = dir.join(table.file_name());
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| LabError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Header of a per-replica trajectory table for dimension `d`.
pub fn trajectory_header(d: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "replica".to_string()];
    if d == 1 {
        h.push("x".to_string());
    } else {
        h.extend((1..=d).map(|i| format!("x{i}")));
    }
    h.extend(["f", "g", "grad_g_sq", "g_gap"].map(String::from));
    h
}
