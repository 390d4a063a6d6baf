//! Output files: provenance headers, tables, JSON.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use qcal_core::config::RunConfig;
use qcal_core::control::RECORD_SCHEMA_VERSION;
use serde::Serialize;

use crate::CliError;

/// The (seed, config hash, schema version) triple every file carries.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    /// Hash of the dataset's generating config, for derived outputs.
    pub dataset_hash: Option<String>,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.seed,
            config_hash: cfg.hash(),
            dataset_hash: None,
        }
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "seed={} config_hash={} schema_version={}",
            self.seed, self.config_hash, RECORD_SCHEMA_VERSION
        );
        if let Some(h) = &self.dataset_hash {
            s.push_str(&format!(" dataset_hash={h}"));
        }
        s
    }
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn render(&self, prov: &Provenance) -> String {
        let mut s = format!("# {}\n{}\n", prov.line(), self.header.join("\t"));
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }
}

/// Table cell for an optional number; empty when absent.
pub fn cell<T: Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(dir, name, &(text + "\n"))
}
