//! Time-normalized uncertainty σ·√T of a primitive against a sweep variable.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::control::ideal_calibration;
use crate::device::{CalibrationState, DeviceTruth, SimModel, Simulator};
use crate::primitives::{self, FailureKind, T1Config, TrainConfig};
use crate::rng::child_seed;
use crate::timing::LatencyModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// π-train length n; σ is the per-pulse angle error (rad).
    PiTrain,
    /// T1 wait scale α with Δt = α·T1; σ is the Γ1 uncertainty (1/µs).
    T1Alpha,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub sweep: Sweep,
    pub values: Vec<f64>,
    pub reps: usize,
    pub shots: u64,
    #[serde(default = "default_replicates")]
    pub bootstrap: usize,
    /// Inclusive range of sweep values entering the exponent fit.
    pub fit_range: [f64; 2],
}

fn default_replicates() -> usize {
    300
}

impl ScalingConfig {
    pub fn pi_train() -> Self {
        Self {
            sweep: Sweep::PiTrain,
            values: vec![3.0, 5.0, 7.0, 11.0, 15.0, 21.0, 31.0, 45.0, 65.0, 100.0],
            reps: 30,
            shots: 128,
            bootstrap: 300,
            fit_range: [3.0, 100.0],
        }
    }

    pub fn t1_alpha() -> Self {
        Self {
            sweep: Sweep::T1Alpha,
            values: vec![0.25, 0.35, 0.5, 0.7, 1.0, 1.4, 2.0, 3.0, 4.0, 6.0],
            reps: 30,
            shots: 500,
            bootstrap: 300,
            fit_range: [0.25, 2.0],
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.reps < 30 {
            return Err(AnalysisError::InvalidInput(format!(
                "reps must be at least 30, got {}",
                self.reps
            )));
        }
        if self.values.is_empty() || self.values.iter().any(|v| !(*v > 0.0)) {
            return Err(AnalysisError::InvalidInput(
                "sweep values must be positive".into(),
            ));
        }
        if self.sweep == Sweep::PiTrain && self.values.iter().any(|v| v.fract() != 0.0) {
            return Err(AnalysisError::InvalidInput(
                "π-train lengths must be integers".into(),
            ));
        }
        if self.shots == 0 || self.bootstrap == 0 {
            return Err(AnalysisError::InvalidInput(
                "shots and bootstrap must be positive".into(),
            ));
        }
        if !(self.fit_range[0] <= self.fit_range[1]) {
            return Err(AnalysisError::InvalidInput(
                "fit_range must be ordered".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub value: f64,
    /// Median time to decision (ms).
    pub t_decision_ms: f64,
    pub sigma: f64,
    /// Median of σ·√T over runs, T in seconds.
    pub sigma_sqrt_t: f64,
    pub ok: usize,
    pub failed: usize,
    pub breakdown: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub sweep: Sweep,
    pub rows: Vec<ScalingRow>,
    pub exponent: f64,
    pub exponent_se: f64,
    pub n_fit: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Slope and its standard error of y against x.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<(f64, f64), AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::InsufficientData(format!(
            "need 3 points for a slope with error, have {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(AnalysisError::ZeroVariance("sweep values"));
    }
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / sxx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    Ok((slope, (ssr / (n - 2.0) / sxx).sqrt()))
}

/// Run the sweep on a frozen truth with the ideal calibration.
pub fn uncertainty_scaling_study(
    truth: &DeviceTruth,
    model: &SimModel,
    latency: &LatencyModel,
    cfg: &ScalingConfig,
    seed: u64,
) -> Result<ScalingStudy, AnalysisError> {
    cfg.validate()?;
    let state = ideal_calibration(truth, &CalibrationState::default());
    let mut rows = Vec::with_capacity(cfg.values.len());
    for (iv, &value) in cfg.values.iter().enumerate() {
        let mut sigmas = Vec::with_capacity(cfg.reps);
        let mut normalized = Vec::with_capacity(cfg.reps);
        let mut times = Vec::with_capacity(cfg.reps);
        let mut failed = 0;
        for rep in 0..cfg.reps {
            let run_seed = child_seed(seed, (iv * cfg.reps + rep) as u64);
            let mut sim = Simulator::new(truth.clone(), model.clone(), *latency, run_seed);
            let result = match cfg.sweep {
                Sweep::PiTrain => primitives::calibrate_pi(
                    &mut sim,
                    &state,
                    &TrainConfig {
                        n: value as u32,
                        shots: cfg.shots,
                        bootstrap: Some(cfg.bootstrap),
                    },
                ),
                Sweep::T1Alpha => primitives::estimate_t1(
                    &mut sim,
                    truth.t1(),
                    &T1Config {
                        shots: cfg.shots,
                        alpha: value,
                        bootstrap: Some(cfg.bootstrap),
                        ..T1Config::default()
                    },
                ),
            };
            match result {
                // A capture retry changes the sampling, so count it as a failure.
                Ok(r) if !r.retried && r.estimate.sigma.is_finite() => {
                    let t_s = r.estimate.t_decision * 1e-3;
                    sigmas.push(r.estimate.sigma);
                    normalized.push(r.estimate.sigma * t_s.sqrt());
                    times.push(r.estimate.t_decision);
                }
                Ok(_) => failed += 1,
                Err(e) if matches!(e.kind, FailureKind::InvalidInput(_)) => {
                    return Err(AnalysisError::InvalidInput(e.to_string()));
                }
                Err(_) => failed += 1,
            }
        }
        let ok = sigmas.len();
        let breakdown = failed * 2 > cfg.reps;
        let (t, s, ns) = if ok > 0 {
            (
                median(&mut times),
                median(&mut sigmas),
                median(&mut normalized),
            )
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        rows.push(ScalingRow {
            value,
            t_decision_ms: t,
            sigma: s,
            sigma_sqrt_t: ns,
            ok,
            failed,
            breakdown,
        });
    }
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.breakdown && r.value >= cfg.fit_range[0] && r.value <= cfg.fit_range[1])
        .filter(|r| r.sigma_sqrt_t > 0.0)
        .map(|r| (r.value, r.sigma_sqrt_t))
        .collect();
    let (exponent, exponent_se) = log_log_slope(&fit)?;
    Ok(ScalingStudy {
        sweep: cfg.sweep,
        rows,
        exponent,
        exponent_se,
        n_fit: fit.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..10)
            .map(|i| (i as f64, 3.0 * (i as f64).powf(-0.8)))
            .collect();
        let (s, se) = log_log_slope(&pts).unwrap();
        assert!((s + 0.8).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn rejects_few_reps() {
        let cfg = ScalingConfig {
            reps: 10,
            ..ScalingConfig::t1_alpha()
        };
        let r = uncertainty_scaling_study(
            &DeviceTruth::default(),
            &SimModel::default(),
            &LatencyModel::default(),
            &cfg,
            1,
        );
        assert!(matches!(r, Err(AnalysisError::InvalidInput(_))));
    }
}
