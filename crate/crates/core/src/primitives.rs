//! Calibration and characterization primitives.
//!
//! Each primitive drives the simulator, applies an estimator or optimizer,
//! and returns an [`Estimate`] with the [`TimingBudget`] it consumed. Failed
//! primitives still spend time; the budget travels with the error.

use std::f64::consts::PI;
use std::fmt;
use std::time::Duration;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{
    self, Acquisition, CalibrationState, IqSample, IqStats, PointRecord, Reset, Simulator,
};
use crate::estimators::{
    self, ade_coords, bootstrap, wrap_phase, Estimate, Estimator, EstimatorError, ShotCounts,
    ThreePointSample,
};
use crate::optimizers::{golden_section, nelder_mead, NelderMeadOptions, TracePoint};
use crate::timing::{self, TimingBudget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveKind {
    T1,
    Readout,
    Resonance,
    Pi,
    Pi2,
    Ramsey,
    CrbAde,
    CrbDense,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 8] = [
        PrimitiveKind::T1,
        PrimitiveKind::Readout,
        PrimitiveKind::Resonance,
        PrimitiveKind::Pi,
        PrimitiveKind::Pi2,
        PrimitiveKind::Ramsey,
        PrimitiveKind::CrbAde,
        PrimitiveKind::CrbDense,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveKind::T1 => "t1",
            PrimitiveKind::Readout => "readout",
            PrimitiveKind::Resonance => "resonance",
            PrimitiveKind::Pi => "pi",
            PrimitiveKind::Pi2 => "pi2",
            PrimitiveKind::Ramsey => "ramsey",
            PrimitiveKind::CrbAde => "crb-ade",
            PrimitiveKind::CrbDense => "crb-dense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    #[error("capture failure after retry: {0}")]
    CaptureFailure(EstimatorError),
    #[error(transparent)]
    Estimator(EstimatorError),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("IQ statistics are not trained")]
    Untrained,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A failed primitive together with the time it consumed.
#[derive(Clone, Debug, Error, PartialEq, Serialize, Deserialize)]
#[error("{primitive} failed: {kind}")]
pub struct PrimitiveError {
    pub primitive: PrimitiveKind,
    pub kind: FailureKind,
    pub budget: TimingBudget,
    pub raw: Vec<PointRecord>,
}

fn invalid(primitive: PrimitiveKind, msg: impl Into<String>) -> PrimitiveError {
    PrimitiveError {
        primitive,
        kind: FailureKind::InvalidInput(msg.into()),
        budget: TimingBudget::default(),
        raw: Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveResult {
    pub primitive: PrimitiveKind,
    pub estimate: Estimate,
    pub budget: TimingBudget,
    pub n_decisions: u32,
    pub raw: Vec<PointRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub updated_state: Option<CalibrationState>,
    /// Whether a capture retry was needed.
    #[serde(default)]
    pub retried: bool,
    /// Optimizer trace, when the primitive searched.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
    /// Secondary quantities (decay base, fitted amplitudes, ...).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<(String, f64)>,
}

impl PrimitiveResult {
    pub fn extra(&self, key: &str) -> Option<f64> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

fn finish_ok(
    sim: &mut Simulator,
    acq: Acquisition,
    primitive: PrimitiveKind,
    mut estimate: Estimate,
    n_decisions: u32,
    raw: Vec<PointRecord>,
) -> PrimitiveResult {
    let budget = sim.finish(acq, n_decisions);
    estimate.t_decision = budget.total_ms();
    PrimitiveResult {
        primitive,
        estimate,
        budget,
        n_decisions,
        raw,
        updated_state: None,
        retried: false,
        trace: Vec::new(),
        extra: Vec::new(),
    }
}

fn finish_err(
    sim: &mut Simulator,
    acq: Acquisition,
    primitive: PrimitiveKind,
    kind: FailureKind,
    n_decisions: u32,
    raw: Vec<PointRecord>,
) -> PrimitiveError {
    let budget = sim.finish(acq, n_decisions);
    PrimitiveError {
        primitive,
        kind,
        budget,
        raw,
    }
}

/// Measure three coordinates and package them for a three-point estimator.
fn measure_three(
    sim: &mut Simulator,
    acq: &mut Acquisition,
    coords: [f64; 3],
    probs: [f64; 3],
    seqs: [Duration; 3],
    shots: u64,
    raw: &mut Vec<PointRecord>,
) -> (ThreePointSample, Option<[ShotCounts; 3]>) {
    let recs =
        [0, 1, 2].map(|i| sim.measure(acq, coords[i], probs[i], shots, seqs[i], Reset::Active));
    raw.extend_from_slice(&recs);
    let sample = ThreePointSample::new(recs.map(|r| r.p_hat), [shots; 3], coords);
    let counts = recs.iter().all(|r| r.successes.is_some()).then(|| {
        recs.map(|r| ShotCounts {
            successes: r.successes.unwrap_or(0),
            shots: r.shots,
        })
    });
    (sample, counts)
}

/// Replace the analytic sigma with a bootstrap one when requested and
/// shot records exist.
fn maybe_bootstrap(
    sim: &mut Simulator,
    estimator: Estimator,
    est: Estimate,
    counts: Option<[ShotCounts; 3]>,
    coords: [f64; 3],
    replicates: Option<usize>,
) -> Result<Estimate, EstimatorError> {
    match (replicates, counts) {
        (Some(reps), Some(counts)) => {
            let seed: u64 = sim.aux_rng().random();
            let b = bootstrap(estimator, &counts, coords, reps, seed)?;
            Ok(Estimate {
                sigma: b.estimate.sigma,
                method: b.estimate.method,
                ..est
            })
        }
        _ => Ok(est),
    }
}

// ---------------------------------------------------------------------------
// T1

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T1Config {
    pub shots: u64,
    /// First delay (µs).
    pub t0: f64,
    /// Δt in units of the T1 guess.
    #[serde(default = "one")]
    pub alpha: f64,
    /// Bootstrap replicates for sigma; analytic propagation when absent.
    #[serde(default)]
    pub bootstrap: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl Default for T1Config {
    fn default() -> Self {
        Self {
            shots: 50,
            t0: 0.016,
            alpha: 1.0,
            bootstrap: None,
        }
    }
}

/// Γ1 from three delays {t0, t0 + αT̃1, t0 + 3αT̃1}.
pub fn estimate_t1(
    sim: &mut Simulator,
    t1_guess: f64,
    cfg: &T1Config,
) -> Result<PrimitiveResult, PrimitiveError> {
    let kind = PrimitiveKind::T1;
    if !(t1_guess > 0.0) || cfg.shots == 0 || !(cfg.alpha > 0.0) || !(cfg.t0 >= 0.0) {
        return Err(invalid(kind, "t1_guess, alpha and shots must be positive"));
    }
    let mut acq = Acquisition::new();
    let mut raw = Vec::new();
    let pulse = sim.model.timing.pulse();
    let mut dt = cfg.alpha * t1_guess;
    let mut last_err = EstimatorError::DegenerateDenominator;
    for attempt in 0..2u32 {
        let coords = ade_coords(cfg.t0, dt);
        let probs = coords.map(|t| device::p1_after_delay(&sim.truth, t));
        let seqs = coords.map(|t| pulse + timing::from_us(t));
        let (sample, counts) =
            measure_three(sim, &mut acq, coords, probs, seqs, cfg.shots, &mut raw);
        let est = estimators::ade_rate(&sample).and_then(|e| {
            maybe_bootstrap(sim, Estimator::AdeRate, e, counts, coords, cfg.bootstrap)
        });
        match est {
            Ok(est) => {
                let mut r = finish_ok(sim, acq, kind, est, attempt + 1, raw);
                r.retried = attempt > 0;
                r.extra.push(("dt_us".into(), dt));
                return Ok(r);
            }
            Err(e @ EstimatorError::TooManyInvalidReplicates { .. }) => {
                return Err(finish_err(
                    sim,
                    acq,
                    kind,
                    FailureKind::Estimator(e),
                    attempt + 1,
                    raw,
                ));
            }
            Err(e) => last_err = e,
        }
        dt *= 0.5;
    }
    Err(finish_err(
        sim,
        acq,
        kind,
        FailureKind::CaptureFailure(last_err),
        2,
        raw,
    ))
}

// ---------------------------------------------------------------------------
// Readout

/// SNR = |μ1 − μ0| / √(σ0² + σ1²) with radial variances.
pub fn snr_objective(iq0: &[IqSample], iq1: &[IqSample]) -> f64 {
    let (s0, s1) = (class_stats(iq0), class_stats(iq1));
    let d = (s1.0[0] - s0.0[0]).hypot(s1.0[1] - s0.0[1]);
    let noise = (s0.1 + s1.1).sqrt();
    if noise > 0.0 {
        d / noise
    } else if d > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Sample centroid and mean squared radial deviation.
fn class_stats(samples: &[IqSample]) -> ([f64; 2], f64) {
    assert!(samples.len() >= 2, "need at least two samples per class");
    let n = samples.len() as f64;
    let mi = samples.iter().map(|s| s.i).sum::<f64>() / n;
    let mq = samples.iter().map(|s| s.q).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|s| (s.i - mi).powi(2) + (s.q - mq).powi(2))
        .sum::<f64>()
        / n;
    ([mi, mq], var)
}

pub fn train_iq_stats(iq0: &[IqSample], iq1: &[IqSample]) -> IqStats {
    let (s0, s1) = (class_stats(iq0), class_stats(iq1));
    IqStats {
        centroids: [s0.0, s1.0],
        variances: [s0.1, s1.1],
    }
}

/// Class with the smallest variance-normalized squared distance; ties go to 0.
pub fn iq_classify(stats: Option<&IqStats>, sample: &IqSample) -> Result<u8, FailureKind> {
    let stats = stats.ok_or(FailureKind::Untrained)?;
    if stats.variances.iter().any(|v| !(*v > 0.0)) {
        return Err(FailureKind::Untrained);
    }
    let d2 = |k: usize| {
        let [ci, cq] = stats.centroids[k];
        ((sample.i - ci).powi(2) + (sample.q - cq).powi(2)) / stats.variances[k]
    };
    Ok(u8::from(d2(1) < d2(0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    /// Shots per prepared state per objective evaluation.
    pub shots_per_eval: usize,
    /// Initial simplex edges (MHz, amplitude).
    pub scale: [f64; 2],
    pub max_iter: usize,
    pub x_tol: f64,
    pub f_tol: f64,
    /// Amplitude search domain upper bound.
    pub amp_max: f64,
    /// Detuning search domain half-width (MHz).
    pub detuning_max: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            shots_per_eval: 2000,
            scale: [0.5, 0.25],
            max_iter: 20,
            x_tol: 1e-3,
            f_tol: 1e-3,
            amp_max: 3.0,
            detuning_max: 5.0,
        }
    }
}

/// Nelder–Mead over (Δf_RO, A_RO) maximizing the measured SNR.
pub fn optimize_readout(
    sim: &mut Simulator,
    state: &CalibrationState,
    cfg: &ReadoutConfig,
) -> Result<PrimitiveResult, PrimitiveError> {
    let kind = PrimitiveKind::Readout;
    if cfg.shots_per_eval < 10 {
        return Err(invalid(kind, "shots_per_eval must be at least 10"));
    }
    let mut acq = Acquisition::new();
    let clamp = |x: &[f64]| {
        [
            x[0].clamp(-cfg.detuning_max, cfg.detuning_max),
            x[1].clamp(0.0, cfg.amp_max),
        ]
    };
    let opts = NelderMeadOptions {
        x_tol: cfg.x_tol,
        f_tol: cfg.f_tol,
        max_iter: cfg.max_iter,
    };
    let result = nelder_mead(
        |x: &[f64]| {
            let [df, amp] = clamp(x);
            let iq0 = sim.acquire_iq(&mut acq, df, amp, 0, cfg.shots_per_eval);
            let iq1 = sim.acquire_iq(&mut acq, df, amp, 1, cfg.shots_per_eval);
            Ok::<_, std::convert::Infallible>(snr_objective(&iq0, &iq1))
        },
        &[state.ro_detuning, state.ro_amp],
        &cfg.scale,
        &opts,
    )
    .expect("objective is infallible");
    // Settle on the final simplex centroid and train the classifier there.
    let [df, amp] = clamp(&result.centroid());
    let iq0 = sim.acquire_iq(&mut acq, df, amp, 0, cfg.shots_per_eval);
    let iq1 = sim.acquire_iq(&mut acq, df, amp, 1, cfg.shots_per_eval);
    let snr = snr_objective(&iq0, &iq1);
    let stats = train_iq_stats(&iq0, &iq1);
    let evaluations = result.evaluations + 1;
    let n_decisions = evaluations as u32;
    let est = Estimate::analytic(
        snr,
        snr_sigma(snr, &stats, cfg.shots_per_eval),
        2 * (evaluations * cfg.shots_per_eval) as u64,
    );
    let mut r = finish_ok(sim, acq, kind, est, n_decisions, Vec::new());
    r.updated_state = Some(CalibrationState {
        ro_detuning: df,
        ro_amp: amp,
        iq_stats: Some(stats),
        ..state.clone()
    });
    r.extra.push(("ro_detuning".into(), df));
    r.extra.push(("ro_amp".into(), amp));
    r.extra
        .push(("iterations".into(), result.iterations as f64));
    r.trace = result.trace;
    Ok(r)
}

/// Delta-method sigma of the sample SNR for Gaussian clouds.
fn snr_sigma(snr: f64, stats: &IqStats, n: usize) -> f64 {
    let [v0, v1] = stats.variances;
    let s2 = v0 + v1;
    let n = n as f64;
    (1.0 / (2.0 * n) + snr * snr * (v0 * v0 + v1 * v1) / (4.0 * n * s2 * s2)).sqrt()
}

// ---------------------------------------------------------------------------
// Spectroscopy

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceConfig {
    /// Full bracket width (MHz), centered on the current drive frequency.
    pub bracket_width: f64,
    pub shots_per_point: u64,
    pub n_iter: usize,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        Self {
            bracket_width: 15.0,
            shots_per_point: 250,
            n_iter: 12,
        }
    }
}

/// Golden-section search for the spectroscopy peak around `center`.
pub fn find_resonance(
    sim: &mut Simulator,
    state: &CalibrationState,
    center: f64,
    cfg: &ResonanceConfig,
) -> Result<PrimitiveResult, PrimitiveError> {
    let kind = PrimitiveKind::Resonance;
    if !(cfg.bracket_width > 0.0) || cfg.shots_per_point == 0 {
        return Err(invalid(
            kind,
            "bracket_width and shots_per_point must be positive",
        ));
    }
    let mut acq = Acquisition::new();
    let mut raw = Vec::new();
    let seq = Duration::from_nanos(sim.model.timing.spec_pulse_ns);
    let half = 0.5 * cfg.bracket_width;
    let g = golden_section(
        |x| {
            let p = device::p1_spectroscopy(&sim.truth, x);
            let r = sim.measure(&mut acq, x, p, cfg.shots_per_point, seq, Reset::Active);
            raw.push(r);
            Ok::<_, std::convert::Infallible>(r.p_hat)
        },
        center - half,
        center + half,
        cfg.n_iter,
    )
    .expect("objective is infallible");
    let width = g.brackets.last().map_or(cfg.bracket_width, |b| b.width());
    let est = Estimate::analytic(
        g.x_best,
        width / 12f64.sqrt(),
        cfg.shots_per_point * g.evaluations as u64,
    );
    let mut r = finish_ok(sim, acq, kind, est, g.evaluations as u32, raw);
    r.updated_state = Some(CalibrationState {
        f_drive: g.x_best,
        ..state.clone()
    });
    r.trace = g.trace;
    Ok(r)
}

// ---------------------------------------------------------------------------
// Pulse-train amplitude calibration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// π pulses per train, or π/2 pairs per train.
    pub n: u32,
    pub shots: u64,
    #[serde(default)]
    pub bootstrap: Option<usize>,
}

impl TrainConfig {
    pub fn pi_default() -> Self {
        Self {
            n: 21,
            shots: 128,
            bootstrap: None,
        }
    }
}

/// Per-unit angle error from a train of `n` units at nominal angle π each.
///
/// Samples amplitude scalings 1 − 1/(2n), 1, 1 + 1/(2n) (P−, P0, P+). The
/// signal is C − A cos(nα) = C + A cos(nα + π), so SPE returns nα + π and
/// the error is read against wrap(nπ + π).
fn train_angle_error(
    sim: &mut Simulator,
    acq: &mut Acquisition,
    raw: &mut Vec<PointRecord>,
    amp: f64,
    n: u32,
    pulses_per_unit: u32,
    shots: u64,
    bootstrap_reps: Option<usize>,
) -> Result<(Estimate, f64), EstimatorError> {
    let nf = n as f64;
    let scales = [1.0 - 0.5 / nf, 1.0, 1.0 + 0.5 / nf];
    let t_pulse = sim.model.timing.pulse();
    let n_pulses = n * pulses_per_unit;
    let t_us = timing::us(t_pulse);
    let truth = sim.truth.clone();
    // Angle per unit is pulses_per_unit · rabi · amp; model it as one train of
    // n units with an envelope over all physical pulses.
    let probs = scales.map(|s| {
        let unit = pulses_per_unit as f64 * truth.rabi_per_amp * amp * s;
        let c = truth.oscillation_contrast();
        let env = (-(n_pulses as f64) * t_us / truth.t2_eff()).exp();
        c.offset - c.amplitude * (nf * unit).cos() * env
    });
    let seq = t_pulse * n_pulses;
    let (sample, counts) = measure_three(sim, acq, scales, probs, [seq; 3], shots, raw);
    let theta = estimators::spe_phase(&sample)?;
    let theta = maybe_bootstrap(sim, Estimator::Spe, theta, counts, scales, bootstrap_reps)?;
    let target = wrap_phase(nf * PI + PI);
    let delta = wrap_phase(theta.value - target);
    let per_unit = Estimate {
        value: delta / nf,
        sigma: theta.sigma / nf,
        ..theta
    };
    Ok((per_unit, theta.value))
}

/// π-amplitude calibration with an n-pulse train.
pub fn calibrate_pi(
    sim: &mut Simulator,
    state: &CalibrationState,
    cfg: &TrainConfig,
) -> Result<PrimitiveResult, PrimitiveError> {
    let kind = PrimitiveKind::Pi;
    if cfg.n == 0 || cfg.shots == 0 {
        return Err(invalid(kind, "n and shots must be at least 1"));
    }
    let mut acq = Acquisition::new();
    let mut raw = Vec::new();
    match train_angle_error(
        sim,
        &mut acq,
        &mut raw,
        state.a_pi,
        cfg.n,
        1,
        cfg.shots,
        cfg.bootstrap,
    ) {
        Ok((d_alpha, theta)) => {
            let a_pi = state.a_pi * PI / (PI + d_alpha.value);
            let mut r = finish_ok(sim, acq, kind, d_alpha, 1, raw);
            r.updated_state = Some(CalibrationState {
                a_pi,
                ..state.clone()
            });
            r.extra.push(("theta".into(), theta));
            r.extra.push(("a_pi".into(), a_pi));
            Ok(r)
        }
        Err(e) => Err(finish_err(
            sim,
            acq,
            kind,
            FailureKind::Estimator(e),
            1,
            raw,
        )),
    }
}

/// π/2-amplitude calibration with trains of pulse pairs.
///
/// The estimate is the per-pulse angle error, half the per-pair error.
pub fn calibrate_pi_half(
    sim: &mut Simulator,
    state: &CalibrationState,
    cfg: &TrainConfig,
) -> Result<PrimitiveResult, PrimitiveError> {
    let kind = PrimitiveKind::Pi2;
    if cfg.n == 0 || cfg.shots == 0 {
        return Err(invalid(kind, "n and shots must be at least 1"));
    }
    let mut acq = Acquisition::new();
    let mut raw = Vec::new();
    match train_angle_error(
        sim,
        &mut acq,
        &mut raw,
        state.a_pi2,
        cfg.n,
        2,
        cfg.shots,
        cfg.bootstrap,
    ) {
        Ok((d_pair, theta)) => {
            let a_pi2 = state.a_pi2 * PI / (PI + d_pair.value);
            let per_pulse = Estimate {
                value: 0.5 * d_pair.value,
                sigma: 0.5 * d_pair.sigma,
                ..d_pair
            };
            let mut r = finish_ok(sim, acq, kind, per_pulse, 1, raw);
            r.updated_state = Some(CalibrationState {
                a_pi2,
                ..state.clone()
            });
            r.extra.push(("theta".into(), theta));
            r.extra.push(("a_pi2".into(), a_pi2));
            Ok(r)
        }
        Err(e) => Err(finish_err(
            sim,
            acq,
            kind,
            FailureKind::Estimator(e),
            1,
            raw,
        )),
    }
}

// ---------------------------------------------------------------------------
// Ramsey

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamseyConfig {
    /// Free evolution time (µs).
    pub tau: f64,
    pub shots: u64,
}

impl Default for RamseyConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            shots: 800,
        }
    }
}

/// Frequency correction from three virtual detunings 0, ±1/(4τ).
pub fn calibrate_frequency_ramsey(
    sim: &mut Simulator,
    state: &CalibrationState,
    cfg: &RamseyConfig,
) -> Result<PrimitiveResult, PrimitiveError> {
    let kind = PrimitiveKind::Ramsey;
    if !(cfg.tau > 0.0) || cfg.shots == 0 {
        return Err(invalid(kind, "tau and shots must be positive"));
    }
    let mut acq = Acquisition::new();
    let mut raw = Vec::new();
    let q = 0.25 / cfg.tau;
    // Ordered (P−, P0, P+) in phase; phase decreases with applied detuning.
    let detunings = [q, 0.0, -q];
    let probs = detunings.map(|d| device::p1_ramsey(&sim.truth, state, d, cfg.tau));
    let seq = sim.model.timing.pulse() * 2 + timing::from_us(cfg.tau);
    let (sample, _) = measure_three(
        sim, &mut acq, detunings, probs, [seq; 3], cfg.shots, &mut raw,
    );
    match estimators::spe_phase(&sample) {
        Ok(theta) => {
            let scale = 1.0 / (2.0 * PI * cfg.tau);
            let df = Estimate {
                value: theta.value * scale,
                sigma: theta.sigma * scale,
                ..theta
            };
            let f_drive = state.f_drive + df.value;
            let mut r = finish_ok(sim, acq, kind, df, 1, raw);
            r.updated_state = Some(CalibrationState {
                f_drive,
                ..state.clone()
            });
            r.extra.push(("f_drive".into(), f_drive));
            Ok(r)
        }
        Err(e) => Err(finish_err(
            sim,
            acq,
            kind,
            FailureKind::Estimator(e),
            1,
            raw,
        )),
    }
}

// ---------------------------------------------------------------------------
// Randomized benchmarking

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrbConfig {
    pub m0: u32,
    pub dm: u32,
    pub shots: u64,
    pub sequences_per_length: u32,
    /// Lengths for the dense fit.
    pub dense_lengths: Vec<u32>,
}

impl Default for CrbConfig {
    fn default() -> Self {
        Self {
            m0: 1,
            dm: 333,
            shots: 100,
            sequences_per_length: 10,
            dense_lengths: vec![1, 50, 100, 200, 334, 500, 750, 1000],
        }
    }
}

/// Survival at each length, pooled over randomizations.
fn crb_points(
    sim: &mut Simulator,
    acq: &mut Acquisition,
    state: &CalibrationState,
    lengths: &[u32],
    cfg: &CrbConfig,
) -> Vec<PointRecord> {
    let t_cl_us = sim.model.t_clifford_us();
    let t_cl = sim.model.timing.clifford(&sim.model.crb);
    let crb = sim.model.crb.clone();
    lengths
        .iter()
        .map(|&m| {
            let p = device::crb_survival(&sim.truth, state, &crb, t_cl_us, m);
            let decay = device::crb_decay(&sim.truth, state, &crb, t_cl_us).powi(m as i32);
            let spread = crb.sequence_sigma * (1.0 - decay);
            let ps = sim.sequence_spread(p, spread, cfg.sequences_per_length as usize);
            let seq = t_cl * m + sim.model.timing.pulse();
            sim.measure_pooled(acq, m as f64, &ps, cfg.shots, seq, Reset::Active)
        })
        .collect()
}

/// Gate fidelity from three sequence lengths m0, m0 + Δm, m0 + 3Δm.
pub fn run_crb_ade(
    sim: &mut Simulator,
    state: &CalibrationState,
    cfg: &CrbConfig,
) -> Result<PrimitiveResult, PrimitiveError> {
    let kind = PrimitiveKind::CrbAde;
    if cfg.dm == 0 || cfg.shots == 0 || cfg.sequences_per_length == 0 {
        return Err(invalid(
            kind,
            "dm, shots and sequences_per_length must be >= 1",
        ));
    }
    let mut acq = Acquisition::new();
    let mut raw = Vec::new();
    let mut dm = cfg.dm;
    let mut last_err = EstimatorError::DegenerateDenominator;
    for attempt in 0..2u32 {
        let lengths = [cfg.m0, cfg.m0 + dm, cfg.m0 + 3 * dm];
        let recs = crb_points(sim, &mut acq, state, &lengths, cfg);
        raw.extend_from_slice(&recs);
        let sample = ThreePointSample::new(
            [recs[0].p_hat, recs[1].p_hat, recs[2].p_hat],
            [recs[0].shots, recs[1].shots, recs[2].shots],
            lengths.map(f64::from),
        );
        match estimators::ade_decay_base(&sample) {
            Ok(p) => {
                let mut r = finish_ok(sim, acq, kind, p.fidelity(), attempt + 1, raw);
                r.retried = attempt > 0;
                r.extra.push(("p".into(), p.value));
                r.extra.push(("p_sigma".into(), p.sigma));
                return Ok(r);
            }
            Err(e) => last_err = e,
        }
        if dm < 2 {
            break;
        }
        dm /= 2;
    }
    Err(finish_err(
        sim,
        acq,
        kind,
        FailureKind::CaptureFailure(last_err),
        2,
        raw,
    ))
}

/// Dense-sampled benchmarking with a three-parameter fit.
pub fn run_crb_dense(
    sim: &mut Simulator,
    state: &CalibrationState,
    cfg: &CrbConfig,
) -> Result<PrimitiveResult, PrimitiveError> {
    let kind = PrimitiveKind::CrbDense;
    let mut lengths = cfg.dense_lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    if lengths.len() < 4 {
        return Err(invalid(kind, "dense fit needs at least 4 distinct lengths"));
    }
    let mut acq = Acquisition::new();
    let recs = crb_points(sim, &mut acq, state, &lengths, cfg);
    let points: Vec<_> = recs.iter().map(|r| (r.coord, r.p_hat, r.shots)).collect();
    match fit_decay(&points) {
        Ok(fit) => {
            let p = Estimate::analytic(fit.p, fit.sigma_p, points.iter().map(|x| x.2).sum());
            let mut r = finish_ok(sim, acq, kind, p.fidelity(), 1, recs);
            r.extra.push(("p".into(), fit.p));
            r.extra.push(("p_sigma".into(), fit.sigma_p));
            r.extra.push(("amplitude".into(), fit.amplitude));
            r.extra.push(("offset".into(), fit.offset));
            Ok(r)
        }
        Err(msg) => Err(finish_err(
            sim,
            acq,
            kind,
            FailureKind::FitFailure(msg),
            1,
            recs,
        )),
    }
}

/// Result of fitting `C + A·p^m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub offset: f64,
    pub p: f64,
    pub sigma_p: f64,
    pub chi2: f64,
}

/// Weighted separable least squares for `C + A·p^m` over (m, P, shots).
///
/// Scans the decay rate −ln p on a log grid, solving (A, C) linearly at each
/// node, then refines by golden-section search around the best node.
pub fn fit_decay(points: &[(f64, f64, u64)]) -> Result<DecayFit, String> {
    if points.len() < 4 {
        return Err("need at least 4 points".into());
    }
    let m_max = points.iter().map(|p| p.0).fold(0.0, f64::max);
    if !(m_max > 0.0) {
        return Err("lengths must include a positive value".into());
    }
    let weights: Vec<f64> = points
        .iter()
        .map(|&(_, p, n)| {
            let n = n as f64;
            1.0 / (p * (1.0 - p) / n).max(1.0 / ((n + 2.0) * (n + 2.0)))
        })
        .collect();

    // Returns (chi², A, C) for a given rate.
    let solve = |rate: f64| -> (f64, f64, f64) {
        let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&(m, y, _), &w) in points.iter().zip(&weights) {
            let x = (-rate * m).exp();
            sw += w;
            sx += w * x;
            sy += w * y;
            sxx += w * x * x;
            sxy += w * x * y;
        }
        let det = sw * sxx - sx * sx;
        if det.abs() < 1e-300 {
            return (f64::INFINITY, 0.0, sy / sw);
        }
        let a = (sw * sxy - sx * sy) / det;
        let c = (sxx * sy - sx * sxy) / det;
        let chi2 = points
            .iter()
            .zip(&weights)
            .map(|(&(m, y, _), &w)| w * (y - c - a * (-rate * m).exp()).powi(2))
            .sum();
        (chi2, a, c)
    };

    let (lo, hi) = ((1e-4 / m_max).ln(), (30.0 / m_max).ln());
    let n_grid = 400;
    let grid: Vec<f64> = (0..=n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / n_grid as f64)
        .collect();
    let (i_best, _) = grid
        .iter()
        .map(|&g| solve(g.exp()).0)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let a = grid[i_best.saturating_sub(1)];
    let b = grid[(i_best + 1).min(n_grid)];
    let refine = golden_section(
        |g| Ok::<_, std::convert::Infallible>(-solve(g.exp()).0),
        a,
        b,
        60,
    )
    .expect("infallible");
    let rate = refine.x_best.exp();
    let (chi2, amplitude, offset) = solve(rate);
    if !chi2.is_finite() {
        return Err("fit did not converge".into());
    }
    let p = (-rate).exp();

    // Covariance (JᵀWJ)⁻¹ for (A, C, p).
    let mut jtj = Matrix3::<f64>::zeros();
    for (&(m, _, _), &w) in points.iter().zip(&weights) {
        let pm = p.powf(m);
        let j = Vector3::new(pm, 1.0, if m > 0.0 { amplitude * m * pm / p } else { 0.0 });
        jtj += w * j * j.transpose();
    }
    let sigma_p = jtj
        .try_inverse()
        .map(|cov| cov[(2, 2)].max(0.0).sqrt())
        .ok_or_else(|| "singular normal matrix: no decay information".to_string())?;
    Ok(DecayFit {
        amplitude,
        offset,
        p,
        sigma_p,
        chi2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceTruth, ShotMode, SimModel};
    use crate::timing::LatencyModel;

    fn exact_sim(truth: DeviceTruth) -> Simulator {
        let model = SimModel {
            shot_mode: ShotMode::Exact,
            ..SimModel::default()
        };
        Simulator::new(truth, model, LatencyModel::default(), 1)
    }

    fn ideal_truth() -> DeviceTruth {
        DeviceTruth {
            p_prep1: 1.0,
            p_read_eg: 0.0,
            p_read_ge: 0.0,
            t2_factor: 1e9,
            ..DeviceTruth::default()
        }
    }

    fn iq(i: f64, q: f64) -> IqSample {
        IqSample {
            i,
            q,
            prepared_state: 0,
            t_stamp: 0.0,
        }
    }

    #[test]
    fn t1_exact_inversion() {
        let mut sim = exact_sim(DeviceTruth {
            gamma1: 1.0 / 20.0,
            ..DeviceTruth::default()
        });
        let r = estimate_t1(&mut sim, 20.0, &T1Config::default()).unwrap();
        let t1 = r.estimate.reciprocal().value;
        assert!((t1 / 20.0 - 1.0).abs() < 1e-9, "{t1}");
        assert_eq!(r.budget.total_ms(), r.estimate.t_decision);
    }

    #[test]
    fn snr_examples() {
        let a = [iq(0.0, 0.0), iq(1.0, 0.0), iq(0.0, 1.0)];
        assert_eq!(snr_objective(&a, &a), 0.0);

        // Clouds at ±0.25 around (0,0) and (1,0): radial variance 0.125.
        let h = 0.125f64.sqrt() / 2f64.sqrt();
        let c0: Vec<_> = [(h, h), (-h, -h), (h, -h), (-h, h)]
            .iter()
            .map(|&(x, y)| iq(x, y))
            .collect();
        let c1: Vec<_> = c0.iter().map(|s| iq(s.i + 1.0, s.q)).collect();
        assert!((snr_objective(&c0, &c1) - 2.0).abs() < 1e-12);

        let scaled = |v: &[IqSample]| {
            v.iter()
                .map(|s| iq(3.7 * s.i, 3.7 * s.q))
                .collect::<Vec<_>>()
        };
        assert!((snr_objective(&scaled(&c0), &scaled(&c1)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn classify_examples() {
        let stats = IqStats {
            centroids: [[0.0, 0.0], [2.0, 0.0]],
            variances: [1.0, 4.0],
        };
        assert_eq!(iq_classify(Some(&stats), &iq(0.0, 0.0)), Ok(0));
        assert_eq!(iq_classify(Some(&stats), &iq(1.4, 0.0)), Ok(1));
        let shared = IqStats {
            centroids: [[0.5, 0.5], [0.5, 0.5]],
            variances: [1.0, 2.0],
        };
        assert_eq!(iq_classify(Some(&shared), &iq(0.5, 0.5)), Ok(0));
        assert_eq!(
            iq_classify(None, &iq(0.0, 0.0)),
            Err(FailureKind::Untrained)
        );
    }

    #[test]
    fn zero_amplitude_gives_zero_snr() {
        let mut sim = Simulator::new(
            DeviceTruth::default(),
            SimModel::default(),
            LatencyModel::default(),
            4,
        );
        let mut acq = Acquisition::new();
        let a = sim.acquire_iq(&mut acq, 0.0, 0.0, 0, 2000);
        let b = sim.acquire_iq(&mut acq, 0.0, 0.0, 1, 2000);
        // Same distribution: sample SNR is small, expected SNR is exactly 0.
        assert!(snr_objective(&a, &b) < 0.1);
        assert_eq!(device::expected_snr(&sim.truth, 0.0, 0.0), 0.0);
    }

    #[test]
    fn resonance_from_offset_bracket() {
        let truth = DeviceTruth {
            f01: 0.3,
            spec_linewidth: 0.5,
            ..DeviceTruth::default()
        };
        let mut sim = exact_sim(truth);
        let cfg = ResonanceConfig {
            bracket_width: 30.0 * 0.5,
            ..Default::default()
        };
        let r = find_resonance(
            &mut sim,
            &CalibrationState::default(),
            0.3 + 5.0 * 0.5,
            &cfg,
        )
        .unwrap();
        assert!((r.estimate.value - 0.3).abs() < 0.05);
        assert_eq!(r.n_decisions, 13);
    }

    #[test]
    fn pi_exact_is_fixed_point() {
        let mut sim = exact_sim(ideal_truth());
        let s = CalibrationState::default();
        let r = calibrate_pi(&mut sim, &s, &TrainConfig::pi_default()).unwrap();
        assert!(r.estimate.value.abs() < 1e-12);
        assert!((r.updated_state.unwrap().a_pi - s.a_pi).abs() < 1e-12);
    }

    #[test]
    fn pi_over_rotation_worked_example() {
        let mut sim = exact_sim(DeviceTruth {
            rabi_per_amp: 1.02 * PI,
            ..ideal_truth()
        });
        let r = calibrate_pi(
            &mut sim,
            &CalibrationState::default(),
            &TrainConfig::pi_default(),
        )
        .unwrap();
        // Modified sampling points bias the estimate slightly away from α = π.
        assert!(
            (r.estimate.value / (0.02 * PI) - 1.0).abs() < 0.02,
            "{}",
            r.estimate.value / PI
        );
        assert!((r.extra("theta").unwrap() / PI - 0.42).abs() < 0.01);
        let a = r.updated_state.unwrap().a_pi;
        assert!((a * 1.02 - 1.0).abs() < 5e-4);
    }

    #[test]
    fn pi_half_over_rotation() {
        let mut sim = exact_sim(DeviceTruth {
            rabi_per_amp: 1.02 * PI,
            ..ideal_truth()
        });
        let r = calibrate_pi_half(
            &mut sim,
            &CalibrationState::default(),
            &TrainConfig::pi_default(),
        )
        .unwrap();
        assert!((r.estimate.value / (0.01 * PI) - 1.0).abs() < 0.02);
        assert_eq!(r.budget.seq, Duration::from_nanos(3 * 128 * 42 * 40));
    }

    #[test]
    fn ramsey_examples() {
        let mut sim = exact_sim(ideal_truth());
        let s = CalibrationState::default();
        let r = calibrate_frequency_ramsey(&mut sim, &s, &RamseyConfig::default()).unwrap();
        assert!(r.estimate.value.abs() < 1e-12);

        let mut sim = exact_sim(DeviceTruth {
            f01: 0.05,
            ..ideal_truth()
        });
        let r = calibrate_frequency_ramsey(&mut sim, &s, &RamseyConfig::default()).unwrap();
        assert!((r.estimate.value - 0.05).abs() < 1e-9);
    }

    #[test]
    fn crb_ade_ideal_gates_fail() {
        let truth = DeviceTruth {
            gamma1: 1e-12,
            ..ideal_truth()
        };
        let mut sim = exact_sim(truth);
        let e = run_crb_ade(
            &mut sim,
            &CalibrationState::default(),
            &CrbConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(e.kind, FailureKind::CaptureFailure(_)));
        assert!(e.budget.total() > Duration::ZERO);
        assert_eq!(sim.now(), e.budget.total());
    }

    #[test]
    fn crb_ade_recovers_fidelity() {
        let gamma = 0.001 / (0.5 * 0.075);
        let mut sim = exact_sim(DeviceTruth {
            gamma1: gamma,
            ..ideal_truth()
        });
        let r = run_crb_ade(
            &mut sim,
            &CalibrationState::default(),
            &CrbConfig::default(),
        )
        .unwrap();
        assert!((r.extra("p").unwrap() - 0.998).abs() < 1e-9);
        assert!((r.estimate.value - 0.999).abs() < 1e-9);
    }

    #[test]
    fn dense_fit_exact_and_symmetric() {
        let (a, c, p): (f64, f64, f64) = (0.45, 0.52, 0.997);
        let pts: Vec<_> = [1.0, 20.0, 60.0, 150.0, 300.0, 600.0, 1000.0]
            .iter()
            .map(|&m: &f64| (m, c + a * p.powf(m), 1000u64))
            .collect();
        let fit = fit_decay(&pts).unwrap();
        assert!((fit.p - p).abs() < 1e-6);
        assert!((fit.amplitude - a).abs() < 1e-6);
        assert!((fit.offset - c).abs() < 1e-6);

        let flipped: Vec<_> = pts.iter().map(|&(m, y, n)| (m, 1.0 - y, n)).collect();
        let ff = fit_decay(&flipped).unwrap();
        assert!((ff.p - fit.p).abs() < 1e-9);
        assert!((ff.amplitude + fit.amplitude).abs() < 1e-6);
        assert!((ff.offset - (1.0 - c)).abs() < 1e-6);
    }

    #[test]
    fn failed_primitive_advances_clock() {
        let mut sim = exact_sim(ideal_truth());
        let state = CalibrationState {
            a_pi2: 0.0,
            ..Default::default()
        };
        // Zero π/2 amplitude: no rotation, flat signal.
        let e = calibrate_pi_half(&mut sim, &state, &TrainConfig::pi_default()).unwrap_err();
        assert!(matches!(
            e.kind,
            FailureKind::Estimator(EstimatorError::NoContrast)
        ));
        assert_eq!(sim.now(), e.budget.total());
    }
}
