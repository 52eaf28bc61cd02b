//! Report envelopes and writers.
//!
//! Every JSON report is `{ "provenance": ..., "result": ... }`. Wall-clock
//! timings go to a separate metadata file so reports from identical inputs
//! are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "fragility";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub thresholds: BTreeMap<String, f64>,
    /// Free-form settings (model, plan, input path, ...).
    pub settings: BTreeMap<String, serde_json::Value>,
    pub standardized: bool,
}

impl Provenance {
    pub fn new(command: impl Into<String>) -> Self {
        Provenance {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            seeds: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            settings: BTreeMap::new(),
            standardized: true,
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn threshold(mut self, name: &str, value: f64) -> Self {
        self.thresholds.insert(name.into(), value);
        self
    }

    pub fn setting(mut self, name: &str, value: impl Serialize) -> Result<Self> {
        self.settings.insert(name.into(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn standardized(mut self, value: bool) -> Self {
        self.standardized = value;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub provenance: &'a Provenance,
    pub result: &'a T,
}

/// Non-reproducible run facts.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Metadata {
    pub command: String,
    pub wall_time_ms: f64,
    pub stages_ms: BTreeMap<String, f64>,
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_report<T: Serialize>(path: impl AsRef<Path>, provenance: &Provenance, result: &T) -> Result<()> {
    write_json(path, &Report { provenance, result })
}

/// Header plus rows of already formatted fields.
pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
