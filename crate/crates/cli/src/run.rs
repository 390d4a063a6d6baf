//! `qcal run <primitive>`.

use qcal_core::config::RunConfig;
use qcal_core::control::{ideal_calibration, RECORD_SCHEMA_VERSION};
use qcal_core::device::{self, CalibrationState, Simulator};
use qcal_core::primitives::{self, PrimitiveKind, PrimitiveResult};
use qcal_core::records::{PrimitiveOutcome, PrimitiveRecord};
use qcal_core::timing;

use crate::output::{self, Provenance};
use crate::svg::{Plot, Series};
use crate::CliError;

#[allow(clippy::result_large_err)]
pub fn execute(
    sim: &mut Simulator,
    cfg: &RunConfig,
    state: &CalibrationState,
    kind: PrimitiveKind,
    t1_guess: f64,
) -> Result<PrimitiveResult, primitives::PrimitiveError> {
    let p = &cfg.primitives;
    match kind {
        PrimitiveKind::T1 => primitives::estimate_t1(sim, t1_guess, &p.t1),
        PrimitiveKind::Readout => primitives::optimize_readout(sim, state, &p.readout),
        PrimitiveKind::Resonance => {
            primitives::find_resonance(sim, state, state.f_drive, &p.resonance)
        }
        PrimitiveKind::Pi => primitives::calibrate_pi(sim, state, &p.pi),
        PrimitiveKind::Pi2 => primitives::calibrate_pi_half(sim, state, &p.pi2),
        PrimitiveKind::Ramsey => primitives::calibrate_frequency_ramsey(sim, state, &p.ramsey),
        PrimitiveKind::CrbAde => primitives::run_crb_ade(sim, state, &p.crb),
        PrimitiveKind::CrbDense => primitives::run_crb_dense(sim, state, &p.crb),
    }
}

pub fn cmd_run(
    cfg: &RunConfig,
    kind: PrimitiveKind,
    plot: bool,
    t1_guess: Option<f64>,
) -> Result<(), CliError> {
    let state = cfg
        .initial
        .clone()
        .unwrap_or_else(|| ideal_calibration(&cfg.device, &CalibrationState::default()));
    let t1_guess = t1_guess.unwrap_or_else(|| cfg.device.t1());
    if t1_guess.is_nan() || t1_guess <= 0.0 {
        return Err(CliError::Usage("--t1-guess must be positive".into()));
    }
    let mut sim = Simulator::new(cfg.device.clone(), cfg.sim.clone(), cfg.latency, cfg.seed);
    let result = execute(&mut sim, cfg, &state, kind, t1_guess);
    let prov = Provenance::of(cfg);
    let dir = std::path::Path::new(&cfg.output_dir);
    let record = PrimitiveRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        seed: cfg.seed,
        config_hash: prov.config_hash.clone(),
        outcome: match &result {
            Ok(r) => PrimitiveOutcome::Ok(Box::new(r.clone())),
            Err(e) => PrimitiveOutcome::Failed(Box::new(e.clone())),
        },
    };
    let path = output::write_json(dir, &format!("run-{}.json", kind.name()), &record)?;
    match result {
        Ok(r) => {
            let b = &r.budget;
            println!(
                "{}\tvalue={}\tsigma={}\tt_decision_ms={}\tdecisions={}",
                kind, r.estimate.value, r.estimate.sigma, r.estimate.t_decision, r.n_decisions
            );
            println!(
                "budget_ms\tseq={}\tmeas={}\treset={}\tanalysis={}\tping={}\ttotal={}",
                timing::ms(b.seq),
                timing::ms(b.meas),
                timing::ms(b.reset),
                timing::ms(b.analysis),
                timing::ms(b.ping),
                b.total_ms()
            );
            if plot {
                if let Some(p) = overlay(cfg, &state, kind, &r, t1_guess) {
                    output::write(
                        dir,
                        &format!("run-{}.svg", kind.name()),
                        &p.to_svg(&prov.line()),
                    )?;
                }
            }
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Err(e) => Err(CliError::Runtime(format!(
            "{e} (record written to {})",
            path.display()
        ))),
    }
}

fn sweep(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// Sparse measured points over the noiseless response, or the optimizer
/// trace for search primitives.
fn overlay(
    cfg: &RunConfig,
    state: &CalibrationState,
    kind: PrimitiveKind,
    r: &PrimitiveResult,
    t1_guess: f64,
) -> Option<Plot> {
    let truth = &cfg.device;
    let points: Vec<(f64, f64)> = r.raw.iter().map(|p| (p.coord, p.p_hat)).collect();
    let t_pulse = timing::us(cfg.sim.timing.pulse());
    let dense = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| {
        sweep(lo, hi, 200).map(|x| (x, f(x))).collect::<Vec<_>>()
    };
    let (title, x_label, curve) = match kind {
        PrimitiveKind::T1 => (
            "T1: three delays over the full decay",
            "delay (µs)",
            dense(&|t| device::p1_after_delay(truth, t), 0.0, 5.0 * t1_guess),
        ),
        PrimitiveKind::Pi => {
            let n = cfg.primitives.pi.n;
            (
                "π train: three amplitude scalings",
                "amplitude scale",
                dense(
                    &|s| device::p1_pi_train(truth, state, n, s, t_pulse),
                    1.0 - 2.0 / n as f64,
                    1.0 + 2.0 / n as f64,
                ),
            )
        }
        PrimitiveKind::Pi2 => {
            let n = cfg.primitives.pi2.n;
            (
                "π/2 pair train: three amplitude scalings",
                "amplitude scale",
                dense(
                    &|s| device::p1_pulse_train(truth, state.a_pi2 * s, 2 * n, t_pulse),
                    1.0 - 2.0 / n as f64,
                    1.0 + 2.0 / n as f64,
                ),
            )
        }
        PrimitiveKind::Ramsey => {
            let tau = cfg.primitives.ramsey.tau;
            let q = 1.0 / tau;
            (
                "Ramsey: three virtual detunings",
                "detuning (MHz)",
                dense(&|d| device::p1_ramsey(truth, state, d, tau), -q, q),
            )
        }
        PrimitiveKind::CrbAde | PrimitiveKind::CrbDense => {
            let t_cl = cfg.sim.t_clifford_us();
            let hi = r.raw.iter().map(|p| p.coord).fold(1.0, f64::max);
            (
                "Clifford benchmarking survival",
                "sequence length m",
                dense(
                    &|m| device::crb_survival(truth, state, &cfg.sim.crb, t_cl, m.round() as u32),
                    1.0,
                    hi,
                ),
            )
        }
        PrimitiveKind::Readout | PrimitiveKind::Resonance => {
            if r.trace.is_empty() {
                return None;
            }
            let best: Vec<(f64, f64)> = r
                .trace
                .iter()
                .enumerate()
                .scan(f64::NEG_INFINITY, |m, (i, t)| {
                    *m = m.max(t.value);
                    Some(((i + 1) as f64, *m))
                })
                .collect();
            let all: Vec<(f64, f64)> = r
                .trace
                .iter()
                .enumerate()
                .map(|(i, t)| ((i + 1) as f64, t.value))
                .collect();
            let y = if kind == PrimitiveKind::Readout {
                "SNR"
            } else {
                "P(|1⟩)"
            };
            return Some(Plot {
                title: format!("{kind}: objective per evaluation"),
                x_label: "evaluation".into(),
                y_label: y.into(),
                series: vec![
                    Series::points("evaluated", all),
                    Series::line("best so far", best),
                ],
                ..Plot::default()
            });
        }
    };
    Some(Plot {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "P(|1⟩)".into(),
        series: vec![
            Series::line("noiseless response", curve),
            Series::points("measured", points),
        ],
        ..Plot::default()
    })
}
