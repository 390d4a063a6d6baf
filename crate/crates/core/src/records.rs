//! On-disk record formats.
//!
//! Campaigns are newline-delimited JSON, one cycle per line, each line
//! carrying the seed, config hash and schema version. A sidecar metadata
//! file holds the resolved configuration.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::control::{CycleRecord, RECORD_SCHEMA_VERSION};
use crate::primitives::{PrimitiveError, PrimitiveResult};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: schema version {found} is not supported (expected {expected})")]
    SchemaVersion {
        line: usize,
        found: u64,
        expected: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignLine {
    pub seed: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub record: CycleRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignMeta {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub n_cycles: usize,
    pub config: RunConfig,
}

impl CampaignMeta {
    /// The stored config omits the output directory, as the hash does.
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            n_cycles: cfg.campaign.n_cycles,
            config: RunConfig {
                output_dir: String::new(),
                ..cfg.clone()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PrimitiveOutcome {
    Ok(Box<PrimitiveResult>),
    Failed(Box<PrimitiveError>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub outcome: PrimitiveOutcome,
}

/// Parse campaign lines, rejecting unsupported schema versions.
pub fn read_campaign(reader: impl BufRead) -> Result<Vec<CampaignLine>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| RecordError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| RecordError::Malformed {
                line: i + 1,
                message: "missing schema_version".into(),
            })?;
        if found != RECORD_SCHEMA_VERSION as u64 {
            return Err(RecordError::SchemaVersion {
                line: i + 1,
                found,
                expected: RECORD_SCHEMA_VERSION,
            });
        }
        out.push(
            serde_json::from_value(value).map_err(|e| RecordError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
