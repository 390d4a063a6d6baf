//! Run configuration: one TOML tree, dotted-path overrides, content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{Channel, ScalingConfig};
use crate::control::{CampaignConfig, LoopPrimitives};
use crate::device::{CalibrationState, DeviceTruth, SimModel};
use crate::drift::{Binding, DriftConfig, Field, ProcessSpec};
use crate::primitives::{
    CrbConfig, RamseyConfig, ReadoutConfig, ResonanceConfig, T1Config, TrainConfig,
};
use crate::timing::LatencyModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("bad override {0:?}: expected path=value")]
    Override(String),
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Standalone primitive settings for single runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveConfigs {
    pub t1: T1Config,
    pub readout: ReadoutConfig,
    pub resonance: ResonanceConfig,
    pub pi: TrainConfig,
    pub pi2: TrainConfig,
    pub ramsey: RamseyConfig,
    pub crb: CrbConfig,
}

impl Default for PrimitiveConfigs {
    fn default() -> Self {
        Self {
            t1: T1Config::default(),
            readout: ReadoutConfig::default(),
            resonance: ResonanceConfig::default(),
            pi: TrainConfig::pi_default(),
            pi2: TrainConfig::pi_default(),
            ramsey: RamseyConfig::default(),
            crb: CrbConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// τ points per decade for Allan curves.
    pub allan_per_decade: usize,
    pub allan_channels: Vec<Channel>,
    /// Channels correlated against ε_A and ε_B.
    pub correlation_channels: Vec<Channel>,
    /// Smoothing times (s) for correlations.
    pub correlation_taus_s: Vec<f64>,
    pub scaling_pi: ScalingConfig,
    pub scaling_t1: ScalingConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            allan_per_decade: 8,
            allan_channels: vec![
                Channel::Gamma1,
                Channel::DeltaF,
                Channel::APi,
                Channel::EpsA,
                Channel::EpsB,
            ],
            correlation_channels: vec![Channel::Gamma1, Channel::DeltaF],
            correlation_taus_s: vec![2.9, 5.8, 14.5, 29.0, 58.0],
            scaling_pi: ScalingConfig::pi_train(),
            scaling_t1: ScalingConfig::t1_alpha(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub device: DeviceTruth,
    /// Starting calibration; exact for the t = 0 truth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<CalibrationState>,
    pub sim: SimModel,
    pub latency: LatencyModel,
    pub drift: DriftConfig,
    pub primitives: PrimitiveConfigs,
    #[serde(rename = "loop")]
    pub loop_primitives: LoopPrimitives,
    pub campaign: CampaignConfig,
    pub analysis: AnalysisConfig,
}

/// Nominal T1 and the two telegraph levels of the default scenario (µs).
const T1_NOMINAL: f64 = 27.5;
const T1_LOW: f64 = 14.5;

/// The default drifting scenario: telegraph Γ1 switching with τ_c = 10 s,
/// an f01 wander that settles 50 kHz above its starting point, and a slow
/// drift of the Rabi rate.
pub fn default_drift(device: &DeviceTruth) -> DriftConfig {
    let g_nominal = 1.0 / T1_NOMINAL;
    DriftConfig {
        dt: 0.01,
        bindings: vec![
            Binding {
                field: Field::Gamma1,
                processes: vec![ProcessSpec::Telegraph {
                    low: 0.0,
                    high: 1.0 / T1_LOW - g_nominal,
                    rate_lh: 0.05,
                    rate_hl: 0.05,
                    initial_high: None,
                }],
            },
            Binding {
                field: Field::F01,
                processes: vec![ProcessSpec::GaussMarkov {
                    mean: 0.05,
                    stddev: 0.02,
                    tau_c: 60.0,
                    initial: Some(0.0),
                }],
            },
            Binding {
                field: Field::RabiPerAmp,
                processes: vec![ProcessSpec::GaussMarkov {
                    mean: 0.0,
                    stddev: 0.008 * device.rabi_per_amp,
                    tau_c: 1000.0,
                    initial: Some(0.0),
                }],
            },
        ],
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let device = DeviceTruth {
            gamma1: 1.0 / T1_NOMINAL,
            iq_noise: 0.1,
            ..DeviceTruth::default()
        };
        Self {
            seed: 7,
            output_dir: "out".into(),
            drift: default_drift(&device),
            device,
            initial: None,
            sim: SimModel::default(),
            latency: LatencyModel::default(),
            primitives: PrimitiveConfigs::default(),
            loop_primitives: LoopPrimitives::default(),
            campaign: CampaignConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

/// Recursively overlay `top` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(path.to_string()));
    }
    let mut node = tree;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(key.to_string(), value);
                    return Ok(());
                }
                t.entry(key.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = key.parse().map_err(|_| {
                    invalid(
                        &keys[..i].join("."),
                        format!("{key:?} is not an array index"),
                    )
                })?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| {
                    invalid(
                        &keys[..=i].join("."),
                        format!("index out of range (len {len})"),
                    )
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(&keys[..i].join("."), "is not a table")),
        };
    }
    Ok(())
}

/// Split `path=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(s.to_string()))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(ConfigError::Override(s.to_string()));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Defaults, overlaid with `file` (if any), then with `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match file {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?,
            ),
            None => None,
        };
        Self::from_parts(text.as_deref(), overrides)
    }

    pub fn from_parts(text: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = toml::Value::try_from(RunConfig::default())
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(text) = text {
            let user: toml::Table =
                toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
            merge(&mut tree, toml::Value::Table(user));
        }
        for o in overrides {
            let (path, raw) = parse_override(o)?;
            set_path(&mut tree, &path, parse_value(&raw))?;
        }
        let cfg: RunConfig =
            serde_path_to_error::deserialize(tree).map_err(|e| ConfigError::Invalid {
                path: e.path().to_string(),
                message: e
                    .inner()
                    .to_string()
                    .lines()
                    .next()
                    .unwrap_or_default()
                    .to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.device.validate().map_err(|m| invalid("device", m))?;
        if let Some(init) = &self.initial {
            init.validate().map_err(|m| invalid("initial", m))?;
        }
        self.drift.validate().map_err(|m| invalid("drift", m))?;
        let c = &self.campaign;
        if !(c.cadence_ms > 0.0 && c.cadence_ms.is_finite()) {
            return Err(invalid("campaign.cadence_ms", "must be positive"));
        }
        let [lo, hi] = c.t1_bounds_us;
        if !(lo > 0.0 && lo < hi) {
            return Err(invalid(
                "campaign.t1_bounds_us",
                "must satisfy 0 < lower < upper",
            ));
        }
        let p = &self.primitives;
        let lp = &self.loop_primitives;
        for (path, t1) in [("primitives.t1", &p.t1), ("loop.t1", &lp.t1)] {
            if t1.shots == 0 || !(t1.alpha > 0.0) || !(t1.t0 >= 0.0) {
                return Err(invalid(
                    path,
                    "shots and alpha must be positive, t0 non-negative",
                ));
            }
        }
        for (path, tr) in [
            ("primitives.pi", &p.pi),
            ("primitives.pi2", &p.pi2),
            ("loop.pi", &lp.pi),
            ("loop.pi2", &lp.pi2),
        ] {
            if tr.n == 0 || tr.shots == 0 {
                return Err(invalid(path, "n and shots must be at least 1"));
            }
        }
        for (path, r) in [
            ("primitives.ramsey", &p.ramsey),
            ("loop.ramsey", &lp.ramsey),
        ] {
            if !(r.tau > 0.0) || r.shots == 0 {
                return Err(invalid(path, "tau and shots must be positive"));
            }
        }
        for (path, crb) in [("primitives.crb", &p.crb), ("loop.crb", &lp.crb)] {
            if crb.dm == 0 || crb.shots == 0 || crb.sequences_per_length == 0 {
                return Err(invalid(
                    path,
                    "dm, shots and sequences_per_length must be at least 1",
                ));
            }
            if crb.dense_lengths.len() < 3 {
                return Err(invalid(path, "dense_lengths needs at least 3 entries"));
            }
        }
        let ro = &p.readout;
        if ro.shots_per_eval == 0
            || ro.max_iter == 0
            || !(ro.amp_max > 0.0)
            || !(ro.detuning_max > 0.0)
        {
            return Err(invalid(
                "primitives.readout",
                "shots, iterations and domain must be positive",
            ));
        }
        let rs = &p.resonance;
        if !(rs.bracket_width > 0.0) || rs.shots_per_point == 0 || rs.n_iter == 0 {
            return Err(invalid(
                "primitives.resonance",
                "bracket, shots and iterations must be positive",
            ));
        }
        let a = &self.analysis;
        if a.allan_per_decade == 0 {
            return Err(invalid("analysis.allan_per_decade", "must be at least 1"));
        }
        if a.correlation_taus_s.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("analysis.correlation_taus_s", "must be positive"));
        }
        a.scaling_pi
            .validate()
            .map_err(|e| invalid("analysis.scaling_pi", e.to_string()))?;
        a.scaling_t1
            .validate()
            .map_err(|e| invalid("analysis.scaling_t1", e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            output_dir: String::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
