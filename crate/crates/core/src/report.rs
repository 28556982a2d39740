//! Machine-readable run reports: inequality rows, JSON summaries, CSV tables.
//!
//! Every inequality a command asserts surfaces as exactly one row carrying
//! its two sides and the slack rhs - lhs; the run passes when every row does.
//! Serialization is deterministic, so identical (config, seed) pairs produce
//! byte-identical files: maps are ordered, floats print as shortest-roundtrip
//! decimals, and nothing time- or path-dependent is echoed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// One asserted inequality lhs <= rhs.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityRow {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// rhs - lhs.
    pub slack: f64,
    pub pass: bool,
}

impl InequalityRow {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self::with_tolerance(name, lhs, rhs, 0.0)
    }

    /// Passes when lhs <= rhs + tolerance; slack still reports rhs - lhs.
    pub fn with_tolerance(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        InequalityRow {
            name: name.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            pass: lhs <= rhs + tolerance,
        }
    }
}

/// JSON summary of one command run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub command: String,
    pub rows: Vec<InequalityRow>,
    /// Command-specific payload: fitted constants, probe tables, file paths.
    pub details: serde_json::Value,
}

impl RunSummary {
    pub fn new(command: impl Into<String>) -> Self {
        RunSummary {
            schema_version: 1,
            command: command.into(),
            rows: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn push(&mut self, row: InequalityRow) {
        self.rows.push(row);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn first_failure(&self) -> Option<&InequalityRow> {
        self.rows.iter().find(|r| !r.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Tidy long-format CSV: named columns, one observation per row, and a JSON
/// sidecar mapping each column name to its description.
#[derive(Debug, Clone)]
pub struct CsvTable {
    columns: Vec<(String, String)>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        CsvTable {
            columns: columns.iter().map(|(n, d)| (n.to_string(), d.to_string())).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.columns.iter().map(|(n, _)| n.as_str()).collect();
        push_record(&mut out, &header);
        for row in &self.rows {
            let fields: Vec<&str> = row.iter().map(String::as_str).collect();
            push_record(&mut out, &fields);
        }
        out
    }

    /// Path of the column-dictionary sidecar written next to `path`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("columns.json")
    }

    /// Writes the CSV at `path` and the column dictionary at the sidecar path.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        let dict: BTreeMap<&str, &str> =
            self.columns.iter().map(|(n, d)| (n.as_str(), d.as_str())).collect();
        let mut text = serde_json::to_string_pretty(&dict)?;
        text.push('\n');
        std::fs::write(Self::sidecar_path(path), text)?;
        Ok(())
    }
}

/// Shortest-roundtrip decimal for CSV fields, switching to scientific
/// notation when the plain form would carry long runs of zeros.
pub fn fmt_num(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-4 || x.abs() >= 1e16) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn push_record(out: &mut String, fields: &[&str]) {
    for (i, field) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        if field.contains([',', '"', '\n']) {
            out.push('"');
            out.push_str(&field.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(field);
        }
    }
    out.push('\n');
}
