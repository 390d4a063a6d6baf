//! Closed-loop recalibration campaign.
//!
//! Each cycle benchmarks a frozen baseline calibration (CRB_A), recalibrates
//! frequency and amplitudes, estimates T1, then benchmarks the live
//! calibration (CRB_B). The device drifts with simulated time throughout,
//! including idle padding between cycles.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::device::{CalibrationState, DeviceTruth, SimModel, Simulator};
use crate::drift::{DriftConfig, DriftError, DriftSchedule};
use crate::primitives::{
    self, CrbConfig, PrimitiveError, PrimitiveKind, PrimitiveResult, RamseyConfig, T1Config,
    TrainConfig,
};
use crate::timing::{self, LatencyModel, TimingBudget};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Cycle cadence (ms).
    pub cadence_ms: f64,
    pub n_cycles: usize,
    /// Allowed range for the controller's T1 guess (µs).
    pub t1_bounds_us: [f64; 2],
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            cadence_ms: 290.0,
            n_cycles: 2000,
            t1_bounds_us: [5.0, 60.0],
        }
    }
}

/// Per-primitive settings used inside the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopPrimitives {
    pub t1: T1Config,
    pub pi: TrainConfig,
    pub pi2: TrainConfig,
    pub ramsey: RamseyConfig,
    pub crb: CrbConfig,
}

impl Default for LoopPrimitives {
    fn default() -> Self {
        Self {
            t1: T1Config {
                shots: 150,
                ..T1Config::default()
            },
            pi: TrainConfig::pi_default(),
            pi2: TrainConfig::pi_default(),
            ramsey: RamseyConfig::default(),
            crb: CrbConfig::default(),
        }
    }
}

/// Calibration that is exact for `truth`.
pub fn ideal_calibration(truth: &DeviceTruth, base: &CalibrationState) -> CalibrationState {
    CalibrationState {
        f_drive: truth.f01,
        a_pi: PI / truth.rabi_per_amp,
        a_pi2: 0.5 * PI / truth.rabi_per_amp,
        ..base.clone()
    }
}

/// Ground truth at the start of a cycle, for diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSnapshot {
    pub gamma1: f64,
    pub f01: f64,
    pub rabi_per_amp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub schema_version: u32,
    pub cycle: usize,
    pub t_start_ms: f64,
    /// Infidelity 1 − F_g with the frozen baseline calibration.
    pub eps_a: Option<f64>,
    /// Infidelity 1 − F_g after recalibration.
    pub eps_b: Option<f64>,
    pub gamma1_hat: Option<f64>,
    /// Drive-frequency shift since the initial calibration (MHz).
    pub delta_f_hat: f64,
    pub a_pi: f64,
    pub a_pi2: f64,
    pub budgets: BTreeMap<String, TimingBudget>,
    /// Names of primitives that failed this cycle; their values are carried.
    pub failures: Vec<String>,
    pub cycle_ms: f64,
    pub overrun: bool,
    pub truth: TruthSnapshot,
}

/// One campaign: drifting device, paired states, one clock.
pub struct Campaign {
    sim: Simulator,
    drift: DriftSchedule,
    static_state: CalibrationState,
    live_state: CalibrationState,
    f_drive_init: f64,
    t1_guess: f64,
    cadence: Duration,
    t1_bounds: [f64; 2],
    prims: LoopPrimitives,
    cycle: usize,
    last_eps: [Option<f64>; 2],
    last_gamma1: Option<f64>,
}

impl Campaign {
    /// `initial`: shared starting calibration; exact for the t = 0 truth
    /// when absent.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        device: DeviceTruth,
        model: SimModel,
        latency: LatencyModel,
        drift: &DriftConfig,
        initial: Option<CalibrationState>,
        prims: LoopPrimitives,
        cfg: &CampaignConfig,
        seed: u64,
    ) -> Result<Self, DriftError> {
        let mut schedule = DriftSchedule::new(device, drift, seed)?;
        let truth0 = schedule.truth_at(0.0)?;
        let state =
            initial.unwrap_or_else(|| ideal_calibration(&truth0, &CalibrationState::default()));
        let t1_guess = truth0.t1().clamp(cfg.t1_bounds_us[0], cfg.t1_bounds_us[1]);
        Ok(Self {
            sim: Simulator::new(truth0, model, latency, seed),
            drift: schedule,
            f_drive_init: state.f_drive,
            static_state: state.clone(),
            live_state: state,
            t1_guess,
            cadence: timing::from_ms(cfg.cadence_ms),
            t1_bounds: cfg.t1_bounds_us,
            prims,
            cycle: 0,
            last_eps: [None, None],
            last_gamma1: None,
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn static_state(&self) -> &CalibrationState {
        &self.static_state
    }

    pub fn live_state(&self) -> &CalibrationState {
        &self.live_state
    }

    /// Bring the simulator's truth up to the current clock time.
    fn sync_truth(&mut self) {
        let t = self.sim.now().as_secs_f64();
        self.sim.truth = self
            .drift
            .truth_at(t)
            .expect("simulated clock never moves backwards");
    }

    fn step<F>(
        &mut self,
        kind: PrimitiveKind,
        budgets: &mut BTreeMap<String, TimingBudget>,
        failures: &mut Vec<String>,
        run: F,
    ) -> Option<PrimitiveResult>
    where
        F: FnOnce(
            &mut Simulator,
            &CalibrationState,
            &CalibrationState,
            f64,
            &LoopPrimitives,
        ) -> Result<PrimitiveResult, PrimitiveError>,
    {
        self.sync_truth();
        let static_state = self.static_state.clone();
        let live = self.live_state.clone();
        match run(
            &mut self.sim,
            &static_state,
            &live,
            self.t1_guess,
            &self.prims,
        ) {
            Ok(r) => {
                budgets.insert(kind.name().to_string(), r.budget);
                Some(r)
            }
            Err(e) => {
                budgets.insert(kind.name().to_string(), e.budget);
                failures.push(kind.name().to_string());
                None
            }
        }
    }

    pub fn run_cycle(&mut self) -> CycleRecord {
        let t_start = self.sim.now();
        self.sync_truth();
        let truth = TruthSnapshot {
            gamma1: self.sim.truth.gamma1,
            f01: self.sim.truth.f01,
            rabi_per_amp: self.sim.truth.rabi_per_amp,
        };
        let mut budgets = BTreeMap::new();
        let mut failures = Vec::new();

        // Budgets keyed by primitive; CRB runs twice, so name them apart.
        let crb_a = self.step(
            PrimitiveKind::CrbAde,
            &mut budgets,
            &mut failures,
            |sim, st, _, _, p| primitives::run_crb_ade(sim, st, &p.crb),
        );
        rename_last(&mut budgets, &mut failures, "crb-ade", "crb_a");

        if let Some(r) = self.step(
            PrimitiveKind::Ramsey,
            &mut budgets,
            &mut failures,
            |sim, _, live, _, p| primitives::calibrate_frequency_ramsey(sim, live, &p.ramsey),
        ) {
            self.live_state = r.updated_state.expect("ramsey updates state");
        }
        if let Some(r) = self.step(
            PrimitiveKind::Pi,
            &mut budgets,
            &mut failures,
            |sim, _, live, _, p| primitives::calibrate_pi(sim, live, &p.pi),
        ) {
            self.live_state = r.updated_state.expect("pi updates state");
        }
        if let Some(r) = self.step(
            PrimitiveKind::Pi2,
            &mut budgets,
            &mut failures,
            |sim, _, live, _, p| primitives::calibrate_pi_half(sim, live, &p.pi2),
        ) {
            self.live_state = r.updated_state.expect("pi2 updates state");
        }
        let t1 = self.step(
            PrimitiveKind::T1,
            &mut budgets,
            &mut failures,
            |sim, _, _, guess, p| primitives::estimate_t1(sim, guess, &p.t1),
        );
        if let Some(r) = &t1 {
            self.last_gamma1 = Some(r.estimate.value);
            self.t1_guess = (1.0 / r.estimate.value).clamp(self.t1_bounds[0], self.t1_bounds[1]);
        }

        let crb_b = self.step(
            PrimitiveKind::CrbAde,
            &mut budgets,
            &mut failures,
            |sim, _, live, _, p| primitives::run_crb_ade(sim, live, &p.crb),
        );
        rename_last(&mut budgets, &mut failures, "crb-ade", "crb_b");

        if let Some(r) = &crb_a {
            self.last_eps[0] = Some(1.0 - r.estimate.value);
        }
        if let Some(r) = &crb_b {
            self.last_eps[1] = Some(1.0 - r.estimate.value);
        }

        let elapsed = self.sim.now() - t_start;
        let overrun = elapsed > self.cadence;
        self.sim.clock_mut().wait_until(t_start + self.cadence);
        let record = CycleRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            cycle: self.cycle,
            t_start_ms: timing::ms(t_start),
            eps_a: self.last_eps[0],
            eps_b: self.last_eps[1],
            gamma1_hat: self.last_gamma1,
            delta_f_hat: self.live_state.f_drive - self.f_drive_init,
            a_pi: self.live_state.a_pi,
            a_pi2: self.live_state.a_pi2,
            budgets,
            failures,
            cycle_ms: timing::ms(elapsed),
            overrun,
            truth,
        };
        self.cycle += 1;
        record
    }
}

fn rename_last(
    budgets: &mut BTreeMap<String, TimingBudget>,
    failures: &mut [String],
    from: &str,
    to: &str,
) {
    if let Some(b) = budgets.remove(from) {
        budgets.insert(to.to_string(), b);
    }
    if let Some(f) = failures.iter_mut().find(|f| f.as_str() == from) {
        *f = to.to_string();
    }
}

/// Run `n_cycles` cycles, handing each record to `sink`.
///
/// Records before `skip` are simulated but not emitted; a resumed run
/// replays them to reach the same state.
pub fn run_campaign<E>(
    campaign: &mut Campaign,
    n_cycles: usize,
    skip: usize,
    mut sink: impl FnMut(&CycleRecord) -> Result<(), E>,
) -> Result<(), E> {
    for k in 0..n_cycles {
        let rec = campaign.run_cycle();
        if k >= skip {
            sink(&rec)?;
        }
    }
    Ok(())
}

/// Mean ε_A, mean ε_B and the percent reduction over cycles where both exist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub cycles: usize,
    pub paired: usize,
    pub mean_eps_a: Option<f64>,
    pub mean_eps_b: Option<f64>,
    pub reduction_percent: Option<f64>,
    pub failures: usize,
    pub overruns: usize,
    pub mean_cycle_ms: Option<f64>,
}

pub fn summarize(records: &[CycleRecord]) -> CampaignSummary {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.eps_a?, r.eps_b?)))
        .collect();
    let n = pairs.len() as f64;
    let (mean_a, mean_b) = if pairs.is_empty() {
        (None, None)
    } else {
        (
            Some(pairs.iter().map(|p| p.0).sum::<f64>() / n),
            Some(pairs.iter().map(|p| p.1).sum::<f64>() / n),
        )
    };
    CampaignSummary {
        cycles: records.len(),
        paired: pairs.len(),
        mean_eps_a: mean_a,
        mean_eps_b: mean_b,
        reduction_percent: mean_a.zip(mean_b).map(|(a, b)| 100.0 * (a - b) / a),
        failures: records.iter().map(|r| r.failures.len()).sum(),
        overruns: records.iter().filter(|r| r.overrun).count(),
        mean_cycle_ms: (!records.is_empty())
            .then(|| records.iter().map(|r| r.cycle_ms).sum::<f64>() / records.len() as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::ShotMode;
    use crate::drift::{Binding, Field, ProcessSpec};

    fn campaign(model: SimModel, drift: DriftConfig, seed: u64) -> Campaign {
        let device = DeviceTruth {
            gamma1: 1.0 / 27.5,
            ..DeviceTruth::default()
        };
        Campaign::new(
            device,
            model,
            LatencyModel::default(),
            &drift,
            None,
            LoopPrimitives::default(),
            &CampaignConfig::default(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_drift_noiseless_cycles_agree() {
        let model = SimModel {
            shot_mode: ShotMode::Exact,
            ..SimModel::default()
        };
        let mut c = campaign(model, DriftConfig::default(), 1);
        for _ in 0..5 {
            let r = c.run_cycle();
            let (a, b) = (r.eps_a.unwrap(), r.eps_b.unwrap());
            assert!((a - b).abs() < 1e-12, "{a} {b}");
            assert!(r.failures.is_empty());
        }
    }

    #[test]
    fn first_cycle_starts_at_zero_and_cadence_holds() {
        let mut c = campaign(SimModel::default(), DriftConfig::default(), 2);
        let r0 = c.run_cycle();
        assert_eq!(r0.t_start_ms, 0.0);
        assert!(!r0.overrun, "cycle took {} ms", r0.cycle_ms);
        let r1 = c.run_cycle();
        assert!((r1.t_start_ms - 290.0).abs() < 1e-9);
        let total: TimingBudget = r0.budgets.values().copied().sum();
        assert!((total.total_ms() - r0.cycle_ms).abs() < 1e-9);
    }

    #[test]
    fn static_state_never_changes() {
        let drift = DriftConfig {
            dt: 0.05,
            bindings: vec![Binding {
                field: Field::F01,
                processes: vec![ProcessSpec::GaussMarkov {
                    mean: 0.0,
                    stddev: 0.05,
                    tau_c: 5.0,
                    initial: None,
                }],
            }],
        };
        let mut c = campaign(SimModel::default(), drift, 3);
        let before = c.static_state().clone();
        for _ in 0..20 {
            c.run_cycle();
        }
        assert_eq!(c.static_state(), &before);
        assert_ne!(c.live_state().f_drive, before.f_drive);
    }

    #[test]
    fn summary_of_nothing() {
        let s = summarize(&[]);
        assert_eq!(s.cycles, 0);
        assert_eq!(s.reduction_percent, None);
    }
}
