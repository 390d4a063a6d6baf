//! Stochastic drift of device parameters over simulated time.
//!
//! Each process uses an exact discretization, so the path statistics do not
//! depend on the step size. Times are in seconds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceTruth;
use crate::rng::stream;

#[derive(Debug, Error, PartialEq)]
pub enum DriftError {
    #[error("time reversal: requested t = {requested} s before last update at {last} s")]
    TimeReversal { requested: f64, last: f64 },
    #[error("invalid drift configuration: {0}")]
    Invalid(String),
}

/// Two-level random switching between `low` and `high`.
#[derive(Clone, Debug, PartialEq)]
pub struct TelegraphProcess {
    pub low: f64,
    pub high: f64,
    pub rate_lh: f64,
    pub rate_hl: f64,
    pub is_high: bool,
}

impl TelegraphProcess {
    pub fn value(&self) -> f64 {
        if self.is_high {
            self.high
        } else {
            self.low
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        let rate = if self.is_high {
            self.rate_hl
        } else {
            self.rate_lh
        };
        if rng.random::<f64>() < 1.0 - (-rate * dt).exp() {
            self.is_high = !self.is_high;
        }
        self.value()
    }

    /// Correlation time of the switching, 1/(rate_lh + rate_hl).
    pub fn tau_c(&self) -> f64 {
        1.0 / (self.rate_lh + self.rate_hl)
    }
}

/// First-order Gauss–Markov (Ornstein–Uhlenbeck) process.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussMarkovProcess {
    pub mean: f64,
    pub stddev: f64,
    pub tau_c: f64,
    pub value: f64,
}

impl GaussMarkovProcess {
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        let decay = (-dt / self.tau_c).exp();
        let kick = self.stddev * (1.0 - decay * decay).max(0.0).sqrt();
        let xi: f64 = StandardNormal.sample(rng);
        self.value = self.mean + (self.value - self.mean) * decay + kick * xi;
        self.value
    }
}

/// Approximate 1/f noise as a sum of Gauss–Markov octaves.
#[derive(Clone, Debug, PartialEq)]
pub struct FlickerProcess {
    pub components: Vec<GaussMarkovProcess>,
}

impl FlickerProcess {
    pub fn value(&self) -> f64 {
        self.components.iter().map(|c| c.value).sum()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        for c in &mut self.components {
            c.step(dt, rng);
        }
        self.value()
    }
}

/// Independent Gaussian value per update step.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteProcess {
    pub stddev: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Process {
    Telegraph(TelegraphProcess),
    GaussMarkov(GaussMarkovProcess),
    Flicker(FlickerProcess),
    White(WhiteProcess),
}

impl Process {
    pub fn value(&self) -> f64 {
        match self {
            Process::Telegraph(p) => p.value(),
            Process::GaussMarkov(p) => p.value,
            Process::Flicker(p) => p.value(),
            Process::White(p) => p.value,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        match self {
            Process::Telegraph(p) => p.step(dt, rng),
            Process::GaussMarkov(p) => p.step(dt, rng),
            Process::Flicker(p) => p.step(dt, rng),
            Process::White(p) => {
                let xi: f64 = StandardNormal.sample(rng);
                p.value = p.stddev * xi;
                p.value
            }
        }
    }
}

/// Config form of a process. Values are offsets added to the nominal field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    Telegraph {
        low: f64,
        high: f64,
        rate_lh: f64,
        rate_hl: f64,
        /// Starting level; drawn from the stationary occupancy if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_high: Option<bool>,
    },
    GaussMarkov {
        #[serde(default)]
        mean: f64,
        stddev: f64,
        tau_c: f64,
        /// Starting value; drawn from the stationary law if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<f64>,
    },
    Flicker {
        /// Standard deviation of each octave.
        stddev: f64,
        /// Shortest correlation time; the others step up by ×10.
        tau_min: f64,
        #[serde(default = "default_octaves")]
        octaves: usize,
    },
    White {
        stddev: f64,
    },
}

fn default_octaves() -> usize {
    5
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<(), String> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be finite"))
            }
        };
        match *self {
            ProcessSpec::Telegraph {
                low,
                high,
                rate_lh,
                rate_hl,
                ..
            } => {
                finite("low", low)?;
                finite("high", high)?;
                if !(rate_lh > 0.0 && rate_hl > 0.0) {
                    return Err("telegraph rates must be positive".into());
                }
            }
            ProcessSpec::GaussMarkov {
                mean,
                stddev,
                tau_c,
                initial,
            } => {
                finite("mean", mean)?;
                if !(stddev >= 0.0) || !(tau_c > 0.0) {
                    return Err("gauss_markov needs stddev >= 0 and tau_c > 0".into());
                }
                if let Some(v) = initial {
                    finite("initial", v)?;
                }
            }
            ProcessSpec::Flicker {
                stddev,
                tau_min,
                octaves,
            } => {
                if !(stddev >= 0.0) || !(tau_min > 0.0) {
                    return Err("flicker needs stddev >= 0 and tau_min > 0".into());
                }
                if octaves < 3 {
                    return Err(format!("flicker needs at least 3 octaves, got {octaves}"));
                }
            }
            ProcessSpec::White { stddev } => {
                if !(stddev >= 0.0) {
                    return Err("white stddev must be >= 0".into());
                }
            }
        }
        Ok(())
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Process {
        match *self {
            ProcessSpec::Telegraph {
                low,
                high,
                rate_lh,
                rate_hl,
                initial_high,
            } => {
                let is_high = initial_high
                    .unwrap_or_else(|| rng.random::<f64>() < rate_lh / (rate_lh + rate_hl));
                Process::Telegraph(TelegraphProcess {
                    low,
                    high,
                    rate_lh,
                    rate_hl,
                    is_high,
                })
            }
            ProcessSpec::GaussMarkov {
                mean,
                stddev,
                tau_c,
                initial,
            } => Process::GaussMarkov(gauss_markov(mean, stddev, tau_c, initial, rng)),
            ProcessSpec::Flicker {
                stddev,
                tau_min,
                octaves,
            } => Process::Flicker(FlickerProcess {
                components: (0..octaves)
                    .map(|k| gauss_markov(0.0, stddev, tau_min * 10f64.powi(k as i32), None, rng))
                    .collect(),
            }),
            ProcessSpec::White { stddev } => {
                let xi: f64 = StandardNormal.sample(rng);
                Process::White(WhiteProcess {
                    stddev,
                    value: stddev * xi,
                })
            }
        }
    }
}

fn gauss_markov<R: Rng + ?Sized>(
    mean: f64,
    stddev: f64,
    tau_c: f64,
    initial: Option<f64>,
    rng: &mut R,
) -> GaussMarkovProcess {
    let value = initial.unwrap_or_else(|| {
        let xi: f64 = StandardNormal.sample(rng);
        mean + stddev * xi
    });
    GaussMarkovProcess {
        mean,
        stddev,
        tau_c,
        value,
    }
}

/// Device parameters a drift process can be bound to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Gamma1,
    F01,
    RabiPerAmp,
    Chi,
    IqNoise,
}

impl Field {
    pub fn nominal(&self, truth: &DeviceTruth) -> f64 {
        match self {
            Field::Gamma1 => truth.gamma1,
            Field::F01 => truth.f01,
            Field::RabiPerAmp => truth.rabi_per_amp,
            Field::Chi => truth.chi,
            Field::IqNoise => truth.iq_noise,
        }
    }

    fn set(&self, truth: &mut DeviceTruth, v: f64) {
        match self {
            // Rates and noise stay strictly positive.
            Field::Gamma1 => truth.gamma1 = v.max(1e-9),
            Field::F01 => truth.f01 = v,
            Field::RabiPerAmp => truth.rabi_per_amp = v,
            Field::Chi => truth.chi = v,
            Field::IqNoise => truth.iq_noise = v.max(1e-12),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Binding {
    pub field: Field,
    pub processes: Vec<ProcessSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    /// Update step (s).
    pub dt: f64,
    #[serde(default)]
    pub bindings: Vec<Binding>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            bindings: Vec::new(),
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        for (i, b) in self.bindings.iter().enumerate() {
            if self.bindings[..i].iter().any(|o| o.field == b.field) {
                return Err(format!("field {:?} is bound more than once", b.field));
            }
            for (j, p) in b.processes.iter().enumerate() {
                p.validate()
                    .map_err(|e| format!("bindings[{i}].processes[{j}]: {e}"))?;
            }
        }
        Ok(())
    }
}

/// Drift bindings with their running process states.
#[derive(Clone, Debug)]
pub struct DriftSchedule {
    nominal: DeviceTruth,
    bindings: Vec<(Field, Vec<Process>)>,
    dt: f64,
    t_last: f64,
    rng: ChaCha8Rng,
}

/// Stream id reserved for drift, distinct from the simulator streams.
const DRIFT_STREAM: u64 = 10;

impl DriftSchedule {
    pub fn new(nominal: DeviceTruth, config: &DriftConfig, seed: u64) -> Result<Self, DriftError> {
        config.validate().map_err(DriftError::Invalid)?;
        let mut rng = stream(seed, DRIFT_STREAM);
        let bindings = config
            .bindings
            .iter()
            .map(|b| {
                (
                    b.field,
                    b.processes.iter().map(|p| p.build(&mut rng)).collect(),
                )
            })
            .collect();
        Ok(Self {
            nominal,
            bindings,
            dt: config.dt,
            t_last: 0.0,
            rng,
        })
    }

    pub fn t_last(&self) -> f64 {
        self.t_last
    }

    pub fn nominal(&self) -> &DeviceTruth {
        &self.nominal
    }

    /// Advance every process to time `t` in steps of at most `dt`.
    pub fn advance_to(&mut self, t: f64) -> Result<(), DriftError> {
        if t < self.t_last {
            return Err(DriftError::TimeReversal {
                requested: t,
                last: self.t_last,
            });
        }
        // Full steps counted from the last update; one partial step at the end.
        let n_full = ((t - self.t_last) / self.dt).floor() as u64;
        for _ in 0..n_full {
            self.step_all(self.dt);
        }
        let rest = t - (self.t_last + n_full as f64 * self.dt);
        if rest > 1e-12 * self.dt.max(1.0) {
            self.step_all(rest);
        }
        self.t_last = t;
        Ok(())
    }

    fn step_all(&mut self, dt: f64) {
        for (_, procs) in &mut self.bindings {
            for p in procs {
                p.step(dt, &mut self.rng);
            }
        }
    }

    /// Summed deviation currently applied to `field`.
    pub fn deviation(&self, field: Field) -> f64 {
        self.bindings
            .iter()
            .filter(|(f, _)| *f == field)
            .flat_map(|(_, ps)| ps.iter().map(Process::value))
            .sum()
    }

    /// Advance to `t` and return the drifted value of `field`.
    pub fn value_at(&mut self, field: Field, t: f64) -> Result<f64, DriftError> {
        self.advance_to(t)?;
        Ok(field.nominal(&self.nominal) + self.deviation(field))
    }

    /// Advance to `t` and return the full drifted truth.
    pub fn truth_at(&mut self, t: f64) -> Result<DeviceTruth, DriftError> {
        self.advance_to(t)?;
        Ok(self.current())
    }

    pub fn current(&self) -> DeviceTruth {
        let mut truth = self.nominal.clone();
        for (field, _) in &self.bindings {
            field.set(
                &mut truth,
                field.nominal(&self.nominal) + self.deviation(*field),
            );
        }
        truth
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn lag1(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
        let cov: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        cov / var
    }

    #[test]
    fn zero_stddev_gauss_markov_is_constant() {
        let mut gm = GaussMarkovProcess {
            mean: 3.0,
            stddev: 0.0,
            tau_c: 1.0,
            value: 3.0,
        };
        let mut r = rng();
        for _ in 0..1000 {
            assert_eq!(gm.step(0.37, &mut r), 3.0);
        }
    }

    #[test]
    fn telegraph_symmetric_occupancy() {
        let mut t = TelegraphProcess {
            low: 0.0,
            high: 1.0,
            rate_lh: 0.1,
            rate_hl: 0.1,
            is_high: false,
        };
        let mut r = rng();
        let n = 100_000;
        let high = (0..n).filter(|_| t.step(1.0, &mut r) == 1.0).count();
        let occ = high as f64 / n as f64;
        assert!((occ - 0.5).abs() < 0.02, "{occ}");
    }

    #[test]
    fn gauss_markov_decorrelates_after_ten_tau() {
        let mut gm = GaussMarkovProcess {
            mean: 0.0,
            stddev: 1.0,
            tau_c: 1.0,
            value: 0.0,
        };
        let mut r = rng();
        let xs: Vec<f64> = (0..10_000).map(|_| gm.step(10.0, &mut r)).collect();
        assert!(lag1(&xs).abs() < 0.04);
    }

    #[test]
    fn gauss_markov_stationary_variance() {
        let mut gm = GaussMarkovProcess {
            mean: 1.0,
            stddev: 0.5,
            tau_c: 2.0,
            value: 1.0,
        };
        let mut r = rng();
        let xs: Vec<f64> = (0..100_000).map(|_| gm.step(1.0, &mut r)).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var / 0.25 - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn empty_schedule_returns_nominal() {
        let truth = DeviceTruth::default();
        let mut s = DriftSchedule::new(truth.clone(), &DriftConfig::default(), 1).unwrap();
        assert_eq!(s.value_at(Field::F01, 100.0).unwrap(), truth.f01);
        assert_eq!(s.truth_at(200.0).unwrap(), truth);
    }

    #[test]
    fn time_reversal_rejected() {
        let mut s = DriftSchedule::new(DeviceTruth::default(), &DriftConfig::default(), 1).unwrap();
        s.advance_to(5.0).unwrap();
        assert!(matches!(
            s.advance_to(4.0),
            Err(DriftError::TimeReversal { .. })
        ));
    }

    #[test]
    fn telegraph_on_gamma1_occupies_two_bands() {
        let nominal = DeviceTruth {
            gamma1: 1.0 / 27.5,
            ..DeviceTruth::default()
        };
        let config = DriftConfig {
            dt: 0.05,
            bindings: vec![Binding {
                field: Field::Gamma1,
                processes: vec![ProcessSpec::Telegraph {
                    low: 0.0,
                    high: 1.0 / 14.5 - 1.0 / 27.5,
                    rate_lh: 0.05,
                    rate_hl: 0.05,
                    initial_high: None,
                }],
            }],
        };
        let mut s = DriftSchedule::new(nominal, &config, 9).unwrap();
        let mut seen = [false, false];
        for k in 1..2000 {
            let t1 = 1.0 / s.value_at(Field::Gamma1, k as f64 * 0.29).unwrap();
            let low = (t1 - 27.5).abs() < 1e-9;
            let high = (t1 - 14.5).abs() < 1e-9;
            assert!(low || high, "{t1}");
            seen[usize::from(high)] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn two_processes_add() {
        let config = DriftConfig {
            dt: 0.1,
            bindings: vec![Binding {
                field: Field::F01,
                processes: vec![
                    ProcessSpec::GaussMarkov {
                        mean: 0.0,
                        stddev: 0.01,
                        tau_c: 5.0,
                        initial: None,
                    },
                    ProcessSpec::White { stddev: 0.02 },
                ],
            }],
        };
        let mut s = DriftSchedule::new(DeviceTruth::default(), &config, 3).unwrap();
        s.advance_to(7.3).unwrap();
        let parts: f64 = s.bindings[0].1.iter().map(Process::value).sum();
        assert_eq!(s.value_at(Field::F01, 7.3).unwrap(), 0.0 + parts);
    }

    #[test]
    fn duplicate_binding_rejected() {
        let b = Binding {
            field: Field::F01,
            processes: vec![],
        };
        let config = DriftConfig {
            dt: 0.1,
            bindings: vec![b.clone(), b],
        };
        assert!(DriftSchedule::new(DeviceTruth::default(), &config, 0).is_err());
    }

    #[test]
    fn flicker_needs_three_octaves() {
        let p = ProcessSpec::Flicker {
            stddev: 1.0,
            tau_min: 1.0,
            octaves: 2,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn halving_dt_preserves_statistics() {
        // Same process sampled every 1 s, once stepped at dt = 1 and once at 0.5.
        let stats = |dt: f64| {
            let config = DriftConfig {
                dt,
                bindings: vec![Binding {
                    field: Field::F01,
                    processes: vec![ProcessSpec::GaussMarkov {
                        mean: 0.0,
                        stddev: 1.0,
                        tau_c: 3.0,
                        initial: Some(0.0),
                    }],
                }],
            };
            let mut s = DriftSchedule::new(DeviceTruth::default(), &config, 77).unwrap();
            let xs: Vec<f64> = (1..=200_000)
                .map(|k| s.value_at(Field::F01, k as f64).unwrap())
                .collect();
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            (v, lag1(&xs))
        };
        let (v1, r1) = stats(1.0);
        let (v2, r2) = stats(0.5);
        let theory = (-1.0f64 / 3.0).exp();
        // Each path within 1% of theory; so they agree with each other.
        assert!(
            (v1 - 1.0).abs() < 0.03 && (v2 - 1.0).abs() < 0.03,
            "{v1} {v2}"
        );
        assert!((r1 - theory).abs() < 0.01 * theory, "{r1}");
        assert!((r2 - theory).abs() < 0.01 * theory, "{r2}");
    }
}
