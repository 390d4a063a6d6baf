//! Single-transmon physics model with dispersive readout.
//!
//! The model is closed-form: every experiment maps to an excited-state
//! probability (or an IQ centroid), and shots are drawn from it. There is no
//! time-domain integration. [`Simulator`] owns the random streams and the
//! simulated clock, and charges each shot to the timing ledger.

use std::f64::consts::PI;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::timing::{self, account, LatencyModel, SimClock, TimingBudget};

/// Ground-truth parameters of the simulated qubit.
///
/// Frequencies in MHz, times in µs, rates in 1/µs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceTruth {
    /// Relaxation rate Γ1 = 1/T1.
    pub gamma1: f64,
    /// Transition frequency offset from the fixed reference.
    pub f01: f64,
    /// Rotation angle per unit drive amplitude, per pulse (rad).
    pub rabi_per_amp: f64,
    /// Spectroscopy half-width.
    pub spec_linewidth: f64,
    /// Dispersive shift.
    pub chi: f64,
    /// Resonator linewidth.
    pub kappa: f64,
    /// Readout amplitude where the high-power penalty reaches 1/e.
    pub a_crit: f64,
    /// Per-quadrature single-shot noise.
    pub iq_noise: f64,
    /// State-preparation fidelity.
    pub p_prep1: f64,
    /// P(read 1 | state 0).
    pub p_read_eg: f64,
    /// P(read 0 | state 1).
    pub p_read_ge: f64,
    /// Residual excited population after relaxation.
    #[serde(default)]
    pub thermal_floor: f64,
    /// Coherence envelope time in units of T1 (T2_eff = t2_factor / gamma1).
    #[serde(default = "default_t2_factor")]
    pub t2_factor: f64,
}

fn default_t2_factor() -> f64 {
    2.0
}

impl Default for DeviceTruth {
    fn default() -> Self {
        Self {
            gamma1: 1.0 / 18.3,
            f01: 0.0,
            rabi_per_amp: PI,
            spec_linewidth: 0.5,
            chi: 0.8,
            kappa: 2.0,
            a_crit: 1.0,
            iq_noise: 0.35,
            p_prep1: 0.98,
            p_read_eg: 0.02,
            p_read_ge: 0.05,
            thermal_floor: 0.0,
            t2_factor: 2.0,
        }
    }
}

/// Response of a probability-valued experiment: `C + A·f(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contrast {
    pub amplitude: f64,
    pub offset: f64,
}

impl DeviceTruth {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("gamma1", self.gamma1),
            ("spec_linewidth", self.spec_linewidth),
            ("kappa", self.kappa),
            ("a_crit", self.a_crit),
            ("iq_noise", self.iq_noise),
            ("t2_factor", self.t2_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("f01", self.f01),
            ("rabi_per_amp", self.rabi_per_amp),
            ("chi", self.chi),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} must be finite, got {v}"));
            }
        }
        let probs = [
            ("p_prep1", self.p_prep1),
            ("p_read_eg", self.p_read_eg),
            ("p_read_ge", self.p_read_ge),
            ("thermal_floor", self.thermal_floor),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.p_prep1 < 0.5 {
            return Err(format!(
                "p_prep1 must be at least 0.5, got {}",
                self.p_prep1
            ));
        }
        if self.p_read_eg + self.p_read_ge > 1.0 {
            return Err("p_read_eg + p_read_ge must not exceed 1".into());
        }
        if self.thermal_floor > self.p_prep1 {
            return Err("thermal_floor must not exceed p_prep1".into());
        }
        Ok(())
    }

    pub fn t1(&self) -> f64 {
        1.0 / self.gamma1
    }

    pub fn t2_eff(&self) -> f64 {
        self.t2_factor / self.gamma1
    }

    pub fn visibility(&self) -> f64 {
        1.0 - self.p_read_eg - self.p_read_ge
    }

    /// Probability that one readout assigns the right label, averaged over states.
    pub fn assignment_fidelity(&self) -> f64 {
        1.0 - 0.5 * (self.p_read_eg + self.p_read_ge)
    }

    /// Measured population as a linear map of the true excited population.
    fn read(&self, p_true: f64) -> f64 {
        (self.p_read_eg + self.visibility() * p_true).clamp(0.0, 1.0)
    }

    /// Contrast of the relaxation curve after a π preparation.
    pub fn decay_contrast(&self) -> Contrast {
        let v = self.visibility();
        Contrast {
            amplitude: v * (self.p_prep1 - self.thermal_floor),
            offset: self.p_read_eg + v * self.thermal_floor,
        }
    }

    /// Contrast of sinusoidal and benchmarking responses starting from |0⟩.
    pub fn oscillation_contrast(&self) -> Contrast {
        let v = self.visibility();
        Contrast {
            amplitude: v * (self.p_prep1 - 0.5),
            offset: self.p_read_eg + 0.5 * v,
        }
    }

    /// Rotation-angle error of one π pulse at amplitude `a_pi` (rad).
    pub fn pi_error(&self, a_pi: f64) -> f64 {
        self.rabi_per_amp * a_pi - PI
    }

    /// Rotation-angle error of one π/2 pulse at amplitude `a_pi2` (rad).
    pub fn pi_half_error(&self, a_pi2: f64) -> f64 {
        self.rabi_per_amp * a_pi2 - 0.5 * PI
    }
}

/// Trained two-class IQ statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqStats {
    /// Class centroids (Ī_k, Q̄_k).
    pub centroids: [[f64; 2]; 2],
    /// Radial variances σ_k².
    pub variances: [f64; 2],
}

/// The controller's current belief about how to drive and read the qubit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationState {
    /// Drive frequency offset from the reference (MHz).
    pub f_drive: f64,
    pub a_pi: f64,
    pub a_pi2: f64,
    /// Readout detuning Δf_RO (MHz).
    pub ro_detuning: f64,
    /// Readout amplitude A_RO.
    pub ro_amp: f64,
    #[serde(default)]
    pub iq_stats: Option<IqStats>,
}

impl Default for CalibrationState {
    fn default() -> Self {
        Self {
            f_drive: 0.0,
            a_pi: 1.0,
            a_pi2: 0.5,
            ro_detuning: 0.0,
            ro_amp: 0.5,
            iq_stats: None,
        }
    }
}

impl CalibrationState {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.a_pi > 0.0) || !(self.a_pi2 > 0.0) {
            return Err("a_pi and a_pi2 must be positive".into());
        }
        if !(self.ro_amp >= 0.0) {
            return Err("ro_amp must be non-negative".into());
        }
        if !self.f_drive.is_finite() || !self.ro_detuning.is_finite() {
            return Err("f_drive and ro_detuning must be finite".into());
        }
        if let Some(stats) = &self.iq_stats {
            if stats.variances.iter().any(|v| !(*v > 0.0)) {
                return Err("trained IQ variances must be positive".into());
            }
        }
        Ok(())
    }
}

/// One integrated single-shot readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqSample {
    pub i: f64,
    pub q: f64,
    pub prepared_state: u8,
    /// Simulated time of the shot (ms).
    pub t_stamp: f64,
}

/// Gate-error model behind the benchmarking survival curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrbErrorModel {
    pub c_coh: f64,
    pub c_det: f64,
    pub c_amp: f64,
    /// Mean physical pulses per single-qubit Clifford.
    pub pulses_per_clifford: f64,
    /// Per-sequence survival spread at full decay; 0 disables it.
    #[serde(default)]
    pub sequence_sigma: f64,
}

impl Default for CrbErrorModel {
    fn default() -> Self {
        Self {
            c_coh: 0.5,
            c_det: 0.25,
            c_amp: 0.25,
            pulses_per_clifford: 1.875,
            sequence_sigma: 0.0,
        }
    }
}

/// Durations of the physical building blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingModel {
    pub pulse_ns: u64,
    pub readout_ns: u64,
    /// One repeat-until-success reset round (measure plus conditional flip).
    pub reset_round_ns: u64,
    /// Passive reset wait, in units of T1.
    pub passive_reset_t1: f64,
    /// Saturating spectroscopy pulse.
    pub spec_pulse_ns: u64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            pulse_ns: 40,
            readout_ns: 1000,
            reset_round_ns: 1000,
            passive_reset_t1: 3.0,
            spec_pulse_ns: 10_000,
        }
    }
}

impl TimingModel {
    pub fn pulse(&self) -> Duration {
        Duration::from_nanos(self.pulse_ns)
    }

    pub fn readout(&self) -> Duration {
        Duration::from_nanos(self.readout_ns)
    }

    /// Mean Clifford duration, rounded to the nanosecond.
    pub fn clifford(&self, crb: &CrbErrorModel) -> Duration {
        Duration::from_nanos((self.pulse_ns as f64 * crb.pulses_per_clifford).round() as u64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotMode {
    /// Binomial / Gaussian shot noise.
    #[default]
    Sampled,
    /// Use exact probabilities; still charges the clock for every shot.
    Exact,
}

// ---------------------------------------------------------------------------
// Response models

/// Excited population after a π pulse and a delay `tau` (µs).
pub fn p1_after_delay(truth: &DeviceTruth, tau: f64) -> f64 {
    let c = truth.decay_contrast();
    c.offset + c.amplitude * (-truth.gamma1 * tau).exp()
}

/// Excited population after `n_pulses` consecutive pulses of total angle
/// `n_pulses · rabi_per_amp · amp`, starting from |0⟩.
///
/// Uses sin²(θ/2) = (1 − cos θ)/2, so an exact odd π train reads `C + A`.
pub fn p1_pulse_train(truth: &DeviceTruth, amp: f64, n_pulses: u32, t_pulse_us: f64) -> f64 {
    let c = truth.oscillation_contrast();
    let angle = n_pulses as f64 * truth.rabi_per_amp * amp;
    let env = (-(n_pulses as f64) * t_pulse_us / truth.t2_eff()).exp();
    c.offset - c.amplitude * angle.cos() * env
}

/// π train at `amp_scale` times the calibrated π amplitude.
pub fn p1_pi_train(
    truth: &DeviceTruth,
    state: &CalibrationState,
    n_pulses: u32,
    amp_scale: f64,
    t_pulse_us: f64,
) -> f64 {
    p1_pulse_train(truth, state.a_pi * amp_scale, n_pulses, t_pulse_us)
}

/// Ramsey response with an applied (virtual) detuning `detuning` (MHz) and
/// free evolution `tau` (µs).
pub fn p1_ramsey(truth: &DeviceTruth, state: &CalibrationState, detuning: f64, tau: f64) -> f64 {
    let c = truth.oscillation_contrast();
    let offset = truth.f01 - state.f_drive;
    let env = (-tau / truth.t2_eff()).exp();
    c.offset + c.amplitude * (2.0 * PI * (detuning - offset) * tau).cos() * env
}

/// Lorentzian spectroscopy line after a saturating drive at `drive_offset`.
pub fn p1_spectroscopy(truth: &DeviceTruth, drive_offset: f64) -> f64 {
    let g2 = truth.spec_linewidth * truth.spec_linewidth;
    let d = drive_offset - truth.f01;
    let lorentz = g2 / (g2 + d * d);
    let p_true = truth.thermal_floor + (0.5 - truth.thermal_floor) * lorentz;
    truth.read(p_true)
}

/// Average error per Clifford under the configured error model.
pub fn clifford_error(
    truth: &DeviceTruth,
    state: &CalibrationState,
    crb: &CrbErrorModel,
    t_clifford_us: f64,
) -> f64 {
    let coherence = crb.c_coh * t_clifford_us * truth.gamma1;
    let detuning = 2.0 * PI * (truth.f01 - state.f_drive) * t_clifford_us;
    let d_pi = truth.pi_error(state.a_pi);
    let d_pi2 = truth.pi_half_error(state.a_pi2);
    let amplitude = 0.5 * (d_pi * d_pi + d_pi2 * d_pi2);
    (coherence + crb.c_det * detuning * detuning + crb.c_amp * amplitude).clamp(0.0, 0.5)
}

/// Depolarizing parameter p = 1 − 2ε of the benchmarking decay.
pub fn crb_decay(
    truth: &DeviceTruth,
    state: &CalibrationState,
    crb: &CrbErrorModel,
    t_clifford_us: f64,
) -> f64 {
    1.0 - 2.0 * clifford_error(truth, state, crb, t_clifford_us)
}

/// Survival signal `C + A·p^m` after `m` random Cliffords.
pub fn crb_survival(
    truth: &DeviceTruth,
    state: &CalibrationState,
    crb: &CrbErrorModel,
    t_clifford_us: f64,
    m: u32,
) -> f64 {
    let c = truth.oscillation_contrast();
    let p = crb_decay(truth, state, crb, t_clifford_us);
    c.offset + c.amplitude * p.powi(m as i32)
}

/// Readout-resonator response centroid for qubit state `k`.
pub fn iq_centroid(truth: &DeviceTruth, ro_detuning: f64, ro_amp: f64, k: u8) -> [f64; 2] {
    let half = 0.5 * truth.kappa;
    let x = if k == 0 {
        ro_detuning - truth.chi
    } else {
        ro_detuning + truth.chi
    };
    let penalty = (-(ro_amp / truth.a_crit).powi(2)).exp();
    let scale = ro_amp * penalty * half / (half * half + x * x);
    [scale * half, -scale * x]
}

/// Centroid separation |μ1 − μ0| at the given readout settings.
pub fn iq_separation(truth: &DeviceTruth, ro_detuning: f64, ro_amp: f64) -> f64 {
    let a = iq_centroid(truth, ro_detuning, ro_amp, 0);
    let b = iq_centroid(truth, ro_detuning, ro_amp, 1);
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Population-weighted SNR expected from infinitely many shots, including
/// preparation errors that mix the two clouds.
pub fn expected_snr(truth: &DeviceTruth, ro_detuning: f64, ro_amp: f64) -> f64 {
    let d = iq_separation(truth, ro_detuning, ro_amp);
    let w1 = truth.p_prep1;
    let w0 = truth.thermal_floor;
    let var = 4.0 * truth.iq_noise * truth.iq_noise + (w1 * (1.0 - w1) + w0 * (1.0 - w0)) * d * d;
    (w1 - w0) * d / var.sqrt()
}

/// Draw `k ~ Binomial(shots, p)`.
pub fn sample_shots<R: Rng + ?Sized>(p: f64, shots: u64, rng: &mut R) -> u64 {
    if shots == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return shots;
    }
    Binomial::new(shots, p)
        .expect("probability checked above")
        .sample(rng)
}

/// Draw `shots` IQ samples for a qubit prepared in `prepared_state`.
pub fn sample_iq<R: Rng + ?Sized>(
    truth: &DeviceTruth,
    ro_detuning: f64,
    ro_amp: f64,
    prepared_state: u8,
    shots: usize,
    t_stamp: f64,
    rng: &mut R,
) -> Vec<IqSample> {
    let mu = [
        iq_centroid(truth, ro_detuning, ro_amp, 0),
        iq_centroid(truth, ro_detuning, ro_amp, 1),
    ];
    let p_excited = if prepared_state == 1 {
        truth.p_prep1
    } else {
        truth.thermal_floor
    };
    let noise = Normal::new(0.0, truth.iq_noise).expect("iq_noise validated positive");
    (0..shots)
        .map(|_| {
            let k = usize::from(rng.random::<f64>() < p_excited);
            IqSample {
                i: mu[k][0] + noise.sample(rng),
                q: mu[k][1] + noise.sample(rng),
                prepared_state,
                t_stamp,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Simulator session

/// How the qubit is returned to |0⟩ after each shot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reset {
    /// Repeat-until-success feedback; rounds are geometric in the
    /// assignment fidelity.
    Active,
    /// Wait a fixed multiple of T1.
    Passive,
}

/// Outcome of one sampling coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub coord: f64,
    pub p_hat: f64,
    /// Absent in exact mode.
    pub successes: Option<u64>,
    pub shots: u64,
}

/// Experiment-side time accumulated by one primitive before accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Acquisition {
    parts: TimingBudget,
}

impl Acquisition {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parts(&self) -> &TimingBudget {
        &self.parts
    }

    pub fn elapsed(&self) -> Duration {
        self.parts.total()
    }
}

/// Simulator configuration that is not ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimModel {
    #[serde(default)]
    pub timing: TimingModel,
    #[serde(default)]
    pub crb: CrbErrorModel,
    #[serde(default)]
    pub shot_mode: ShotMode,
}

impl SimModel {
    pub fn t_clifford_us(&self) -> f64 {
        timing::us(self.timing.clifford(&self.crb))
    }
}

/// One experiment run: truth, random streams, latency model and clock.
///
/// Shot outcomes, reset durations and IQ noise are drawn from separate
/// streams, so changing the latency model never changes an estimate.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub truth: DeviceTruth,
    pub model: SimModel,
    pub latency: LatencyModel,
    clock: SimClock,
    shots_rng: ChaCha8Rng,
    reset_rng: ChaCha8Rng,
    iq_rng: ChaCha8Rng,
    aux_rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(truth: DeviceTruth, model: SimModel, latency: LatencyModel, seed: u64) -> Self {
        Self {
            truth,
            model,
            latency,
            clock: SimClock::new(),
            shots_rng: stream(seed, 1),
            reset_rng: stream(seed, 2),
            iq_rng: stream(seed, 3),
            aux_rng: stream(seed, 4),
        }
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn clock_mut(&mut self) -> &mut SimClock {
        &mut self.clock
    }

    pub fn now(&self) -> Duration {
        self.clock.now()
    }

    pub fn exact(&self) -> bool {
        self.model.shot_mode == ShotMode::Exact
    }

    /// Stream for bootstrap resampling and other analysis-side randomness.
    pub fn aux_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.aux_rng
    }

    fn charge_shots(&mut self, acq: &mut Acquisition, shots: u64, seq: Duration, reset: Reset) {
        let shots32 = u32::try_from(shots).expect("shot count fits in u32");
        acq.parts.seq += seq * shots32;
        acq.parts.meas += self.model.timing.readout() * shots32;
        acq.parts.reset += match reset {
            Reset::Active => {
                let rounds = shots + self.reset_failures(shots);
                Duration::from_nanos(rounds * self.model.timing.reset_round_ns)
            }
            Reset::Passive => {
                let wait = timing::from_us(self.model.timing.passive_reset_t1 * self.truth.t1());
                wait * shots32
            }
        };
    }

    /// Failed rounds summed over `shots` geometric resets, drawn as a
    /// negative binomial via its gamma–Poisson mixture.
    fn reset_failures(&mut self, shots: u64) -> u64 {
        let f = self.truth.assignment_fidelity();
        if f >= 1.0 || shots == 0 {
            return 0;
        }
        let gamma = Gamma::new(shots as f64, (1.0 - f) / f).expect("positive shape and scale");
        let lambda: f64 = gamma.sample(&mut self.reset_rng);
        if lambda <= 0.0 {
            return 0;
        }
        Poisson::new(lambda)
            .map(|p| p.sample(&mut self.reset_rng) as u64)
            .unwrap_or(0)
    }

    /// Measure a probability-valued experiment with `shots` repetitions of a
    /// `seq`-long sequence.
    pub fn measure(
        &mut self,
        acq: &mut Acquisition,
        coord: f64,
        p: f64,
        shots: u64,
        seq: Duration,
        reset: Reset,
    ) -> PointRecord {
        let p = p.clamp(0.0, 1.0);
        self.charge_shots(acq, shots, seq, reset);
        if self.exact() {
            PointRecord {
                coord,
                p_hat: p,
                successes: None,
                shots,
            }
        } else {
            let k = sample_shots(p, shots, &mut self.shots_rng);
            PointRecord {
                coord,
                p_hat: k as f64 / shots as f64,
                successes: Some(k),
                shots,
            }
        }
    }

    /// Measure a batch of sequences that each have their own survival
    /// probability, pooling the outcomes into one point.
    pub fn measure_pooled(
        &mut self,
        acq: &mut Acquisition,
        coord: f64,
        probabilities: &[f64],
        shots_each: u64,
        seq: Duration,
        reset: Reset,
    ) -> PointRecord {
        let shots = shots_each * probabilities.len() as u64;
        self.charge_shots(acq, shots, seq, reset);
        if self.exact() {
            let mean = probabilities.iter().sum::<f64>() / probabilities.len() as f64;
            return PointRecord {
                coord,
                p_hat: mean,
                successes: None,
                shots,
            };
        }
        let k: u64 = probabilities
            .iter()
            .map(|&p| sample_shots(p.clamp(0.0, 1.0), shots_each, &mut self.shots_rng))
            .sum();
        PointRecord {
            coord,
            p_hat: k as f64 / shots as f64,
            successes: Some(k),
            shots,
        }
    }

    /// Gaussian per-sequence deviations for pooled benchmarking draws.
    pub fn sequence_spread(&mut self, mean: f64, sigma: f64, n: usize) -> Vec<f64> {
        if sigma <= 0.0 || self.exact() {
            return vec![mean; n];
        }
        let normal = Normal::new(0.0, sigma).expect("sigma checked positive");
        (0..n)
            .map(|_| (mean + normal.sample(&mut self.shots_rng)).clamp(0.0, 1.0))
            .collect()
    }

    /// Acquire single-shot IQ samples without active reset.
    pub fn acquire_iq(
        &mut self,
        acq: &mut Acquisition,
        ro_detuning: f64,
        ro_amp: f64,
        prepared_state: u8,
        shots: usize,
    ) -> Vec<IqSample> {
        let prep = if prepared_state == 1 {
            self.model.timing.pulse()
        } else {
            Duration::ZERO
        };
        let t_stamp = timing::ms(self.clock.now() + acq.elapsed());
        self.charge_shots(acq, shots as u64, prep, Reset::Passive);
        if self.exact() {
            let mu = iq_centroid(&self.truth, ro_detuning, ro_amp, prepared_state);
            return vec![
                IqSample {
                    i: mu[0],
                    q: mu[1],
                    prepared_state,
                    t_stamp,
                };
                shots
            ];
        }
        sample_iq(
            &self.truth,
            ro_detuning,
            ro_amp,
            prepared_state,
            shots,
            t_stamp,
            &mut self.iq_rng,
        )
    }

    /// Close a primitive: add decision costs, advance the clock, return the
    /// primitive's budget.
    pub fn finish(&mut self, acq: Acquisition, n_decisions: u32) -> TimingBudget {
        let budget = account(acq.parts, &self.latency, n_decisions);
        self.clock.charge(&budget);
        budget
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ideal() -> DeviceTruth {
        DeviceTruth {
            p_prep1: 1.0,
            p_read_eg: 0.0,
            p_read_ge: 0.0,
            ..DeviceTruth::default()
        }
    }

    /// Truth whose decay contrast is exactly (A, C).
    fn with_decay_contrast(a: f64, c: f64, gamma1: f64) -> DeviceTruth {
        // A = V·p, C = p_eg with p_ge = 0  =>  V = 1 − C, p = A / V.
        DeviceTruth {
            gamma1,
            p_read_eg: c,
            p_read_ge: 0.0,
            p_prep1: a / (1.0 - c),
            ..DeviceTruth::default()
        }
    }

    #[test]
    fn decay_at_zero_delay_is_one_for_ideal_spam() {
        let t = DeviceTruth {
            gamma1: 1.0 / 18.3,
            ..ideal()
        };
        assert_eq!(p1_after_delay(&t, 0.0), 1.0);
    }

    #[test]
    fn decay_direct_evaluation() {
        let t = with_decay_contrast(0.4, 0.3, 2.0);
        assert!((p1_after_delay(&t, 0.6) - 0.420478).abs() < 1e-6);
        assert!((p1_after_delay(&t, 1e6) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn pi_train_exact_odd_count_is_excited() {
        let t = DeviceTruth {
            t2_factor: 1e12,
            ..ideal()
        };
        let s = CalibrationState::default();
        assert!((p1_pi_train(&t, &s, 21, 1.0, 0.04) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pi_train_over_rotation() {
        // A = C = 0.5, per-pulse angle 1.02π, 21 pulses.
        let t = DeviceTruth {
            t2_factor: 1e12,
            rabi_per_amp: 1.02 * PI,
            ..ideal()
        };
        let p = p1_pi_train(&t, &CalibrationState::default(), 21, 1.0, 0.04);
        assert!((p - 0.624345).abs() < 1e-6, "{p}");
    }

    #[test]
    fn ramsey_direct_evaluation() {
        let t = DeviceTruth {
            t2_factor: 1e12,
            ..ideal()
        };
        let s = CalibrationState::default();
        assert!((p1_ramsey(&t, &s, 0.0, 1.0) - 1.0).abs() < 1e-12);

        let detuned = DeviceTruth {
            f01: 0.05,
            ..t.clone()
        };
        assert!((p1_ramsey(&detuned, &s, 0.0, 1.0) - 0.975528).abs() < 1e-6);

        // Quarter-period offset lands on the offset C.
        let q = p1_ramsey(&t, &s, 0.25, 1.0);
        assert!((q - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spectroscopy_lorentzian() {
        let t = DeviceTruth {
            f01: 2.0,
            spec_linewidth: 1.0,
            ..ideal()
        };
        assert!((p1_spectroscopy(&t, 2.0) - 0.5).abs() < 1e-12);
        assert!((p1_spectroscopy(&t, 3.0) - 0.25).abs() < 1e-12);
        assert!((p1_spectroscopy(&t, 1.0) - 0.25).abs() < 1e-12);

        // P_bg = 0.1, h = 0.4: choose p_eg = 0.1, V = 0.8.
        let t = DeviceTruth {
            p_read_eg: 0.1,
            p_read_ge: 0.1,
            ..t
        };
        assert!((p1_spectroscopy(&t, 5.0) - 0.14).abs() < 1e-12);
    }

    #[test]
    fn crb_survival_closed_form() {
        let t = ideal();
        let s = CalibrationState::default();
        let crb = CrbErrorModel {
            c_coh: 0.0,
            ..CrbErrorModel::default()
        };
        // Perfect pulses, no coherence term: flat curve.
        for m in [0, 1, 100, 1000] {
            assert!((crb_survival(&t, &s, &crb, 0.075, m) - 1.0).abs() < 1e-12);
        }
        // p = 0.998 from the coherence term alone.
        let gamma = 0.001 / (0.5 * 0.075);
        let t = DeviceTruth { gamma1: gamma, ..t };
        let crb = CrbErrorModel::default();
        let p = crb_survival(&t, &s, &crb, 0.075, 334);
        assert!((p - 0.756195).abs() < 1e-6, "{p}");
        assert!((crb_survival(&t, &s, &crb, 0.075, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iq_separation_two_lorentzians() {
        let t = DeviceTruth {
            chi: 1.0,
            kappa: 2.0,
            a_crit: 1e9,
            ..DeviceTruth::default()
        };
        assert!((iq_separation(&t, 0.0, 1.0) - 1.0).abs() < 1e-9);
        assert_eq!(iq_separation(&t, 0.3, 0.0), 0.0);
    }

    #[test]
    fn binomial_edges_and_clt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_shots(0.0, 100, &mut rng), 0);
        assert_eq!(sample_shots(1.0, 50, &mut rng), 50);
        let k = sample_shots(0.5, 1_000_000, &mut rng);
        assert!((k as f64 / 1e6 - 0.5).abs() < 0.002);
    }

    #[test]
    fn noiseless_iq_sits_on_centroid() {
        let t = DeviceTruth {
            iq_noise: 1e-300,
            p_prep1: 1.0,
            ..DeviceTruth::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = iq_centroid(&t, 0.1, 0.7, 1);
        for s in sample_iq(&t, 0.1, 0.7, 1, 20, 0.0, &mut rng) {
            assert!((s.i - mu[0]).abs() < 1e-12 && (s.q - mu[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn simulator_is_deterministic() {
        let run = |seed| {
            let mut sim = Simulator::new(
                DeviceTruth::default(),
                SimModel::default(),
                LatencyModel::default(),
                seed,
            );
            let mut acq = Acquisition::new();
            let r = sim.measure(
                &mut acq,
                0.0,
                0.37,
                500,
                Duration::from_micros(3),
                Reset::Active,
            );
            (r, sim.finish(acq, 1))
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11).0, run(12).0);
    }

    #[test]
    fn validation_rejects_bad_truth() {
        let mut t = DeviceTruth::default();
        assert!(t.validate().is_ok());
        t.iq_noise = 0.0;
        assert!(t.validate().is_err());
        let t = DeviceTruth {
            p_prep1: 0.4,
            ..DeviceTruth::default()
        };
        assert!(t.validate().is_err());
    }
}
