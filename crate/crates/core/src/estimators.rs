//! Closed-form three-point estimators with error propagation and bootstrap.
//!
//! ADE inverts an exponential from samples at `t0`, `t0 + Δt`, `t0 + 3Δt`.
//! SPE recovers the argument of a sinusoid from samples at the center and
//! at ±π/2 around it. Both are independent of signal amplitude and offset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::sample_shots;

/// Smallest denominator treated as information-bearing (probability units).
pub const EPS_DEN: f64 = 1e-9;

#[derive(Clone, Debug, Error, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorError {
    #[error("degenerate denominator: signal is flat between the first two points")]
    DegenerateDenominator,
    #[error("ratio c = {c} is outside the capture range (1, 3)")]
    OutOfCaptureRange { c: f64 },
    #[error("no contrast: both phase components vanish")]
    NoContrast,
    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyInvalidReplicates { failed: usize, total: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    Bootstrap,
}

/// A value with its 1σ uncertainty and the time it took to obtain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
    pub shots_used: u64,
    /// Time-to-decision (ms).
    pub t_decision: f64,
    pub method: Method,
}

impl Estimate {
    pub fn analytic(value: f64, sigma: f64, shots_used: u64) -> Self {
        Self {
            value,
            sigma,
            shots_used,
            t_decision: 0.0,
            method: Method::Analytic,
        }
    }

    /// First-order view of 1/value, e.g. T1 from Γ1.
    pub fn reciprocal(&self) -> Estimate {
        Estimate {
            value: 1.0 / self.value,
            sigma: self.sigma / (self.value * self.value),
            ..*self
        }
    }

    /// Average Clifford gate fidelity (1 + p)/2 from a decay base p.
    pub fn fidelity(&self) -> Estimate {
        Estimate {
            value: 0.5 * (1.0 + self.value),
            sigma: 0.5 * self.sigma,
            ..*self
        }
    }

    pub fn relative_sigma(&self) -> f64 {
        self.sigma / self.value.abs()
    }
}

/// Three measured probabilities with their shot counts and coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreePointSample {
    pub p: [f64; 3],
    pub n: [u64; 3],
    pub coords: [f64; 3],
}

impl ThreePointSample {
    pub fn new(p: [f64; 3], n: [u64; 3], coords: [f64; 3]) -> Self {
        Self { p, n, coords }
    }

    pub fn from_counts(k: [u64; 3], n: [u64; 3], coords: [f64; 3]) -> Self {
        let p = [0, 1, 2].map(|i| k[i] as f64 / n[i] as f64);
        Self { p, n, coords }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.n.contains(&0) {
            return Err(EstimatorError::InvalidInput(
                "shot counts must be >= 1".into(),
            ));
        }
        if self.p.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EstimatorError::InvalidInput(format!(
                "probabilities must lie in [0, 1]: {:?}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn shots(&self) -> u64 {
        self.n.iter().sum()
    }

    /// Per-point binomial standard deviation with the boundary floor.
    pub fn point_sigmas(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| {
            let (p, n) = (self.p[i], self.n[i] as f64);
            let var = p * (1.0 - p) / n;
            let floor = 1.0 / ((n + 2.0) * (n + 2.0));
            if p <= 0.0 || p >= 1.0 {
                var.max(floor).sqrt()
            } else {
                var.sqrt()
            }
        })
    }

    /// Step between the first two coordinates.
    fn step(&self) -> Result<f64, EstimatorError> {
        let d = self.coords[1] - self.coords[0];
        let d3 = self.coords[2] - self.coords[0];
        if !(d > 0.0) || (d3 - 3.0 * d).abs() > 1e-9 * d3.abs().max(1.0) {
            return Err(EstimatorError::InvalidInput(format!(
                "coordinates must be t0, t0+d, t0+3d with d > 0: {:?}",
                self.coords
            )));
        }
        Ok(d)
    }
}

/// c = (P(t0+3Δt) − P(t0)) / (P(t0+Δt) − P(t0)).
pub fn ade_ratio(s: &ThreePointSample) -> Result<f64, EstimatorError> {
    let den = s.p[1] - s.p[0];
    if den.abs() <= EPS_DEN {
        return Err(EstimatorError::DegenerateDenominator);
    }
    Ok((s.p[2] - s.p[0]) / den)
}

/// Per-step decay factor x = √(c − 3/4) − 1/2, the root of x² + x + 1 = c.
fn ade_x(c: f64) -> Result<f64, EstimatorError> {
    if !(c > 1.0 && c < 3.0) {
        return Err(EstimatorError::OutOfCaptureRange { c });
    }
    Ok((c - 0.75).sqrt() - 0.5)
}

/// Gradient of c with respect to (P_a, P_b, P_c).
fn ade_ratio_grad(s: &ThreePointSample) -> [f64; 3] {
    let d = s.p[1] - s.p[0];
    [
        (s.p[2] - s.p[1]) / (d * d),
        -(s.p[2] - s.p[0]) / (d * d),
        1.0 / d,
    ]
}

fn combine(grad: [f64; 3], sigmas: [f64; 3]) -> f64 {
    grad.iter()
        .zip(sigmas)
        .map(|(g, s)| (g * s).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn ade_rate_value(s: &ThreePointSample) -> Result<f64, EstimatorError> {
    let dt = s.step()?;
    let x = ade_x(ade_ratio(s)?)?;
    Ok(-x.ln() / dt)
}

fn ade_decay_base_value(s: &ThreePointSample) -> Result<f64, EstimatorError> {
    let dm = s.step()?;
    let x = ade_x(ade_ratio(s)?)?;
    Ok(x.powf(1.0 / dm))
}

/// Decay rate Γ from samples at `t0`, `t0 + Δt`, `t0 + 3Δt`.
pub fn ade_rate(s: &ThreePointSample) -> Result<Estimate, EstimatorError> {
    s.validate()?;
    let value = ade_rate_value(s)?;
    let sigma = propagate_sigma(Estimator::AdeRate, s)?;
    Ok(Estimate::analytic(value, sigma, s.shots()))
}

/// Decay base p per unit coordinate, e.g. per Clifford from lengths
/// `m0`, `m0 + Δm`, `m0 + 3Δm`.
pub fn ade_decay_base(s: &ThreePointSample) -> Result<Estimate, EstimatorError> {
    s.validate()?;
    let value = ade_decay_base_value(s)?;
    let sigma = propagate_sigma(Estimator::AdeDecayBase, s)?;
    Ok(Estimate::analytic(value, sigma, s.shots()))
}

/// Sample coordinates for ADE: `t0`, `t0 + dt`, `t0 + 3dt`.
pub fn ade_coords(t0: f64, dt: f64) -> [f64; 3] {
    [t0, t0 + dt, t0 + 3.0 * dt]
}

fn spe_components(s: &ThreePointSample) -> (f64, f64) {
    let [pm, p0, pp] = s.p;
    (pm - pp, 2.0 * p0 - pm - pp)
}

fn spe_value(s: &ThreePointSample) -> Result<f64, EstimatorError> {
    let (y, z) = spe_components(s);
    if y.abs() <= EPS_DEN && z.abs() <= EPS_DEN {
        return Err(EstimatorError::NoContrast);
    }
    Ok(wrap_phase(y.atan2(z)))
}

/// Argument θ of the sinusoid at the center sample, from samples ordered
/// (P−, P0, P+) at θ0 − π/2, θ0, θ0 + π/2.
pub fn spe_phase(s: &ThreePointSample) -> Result<Estimate, EstimatorError> {
    s.validate()?;
    let value = spe_value(s)?;
    let sigma = propagate_sigma(Estimator::Spe, s)?;
    Ok(Estimate::analytic(value, sigma, s.shots()))
}

/// Wrap an angle into (−π, π].
pub fn wrap_phase(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = theta.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    AdeRate,
    AdeDecayBase,
    Spe,
}

impl Estimator {
    /// Point value only, no uncertainty.
    pub fn evaluate(&self, s: &ThreePointSample) -> Result<f64, EstimatorError> {
        match self {
            Estimator::AdeRate => ade_rate_value(s),
            Estimator::AdeDecayBase => ade_decay_base_value(s),
            Estimator::Spe => spe_value(s),
        }
    }

    pub fn estimate(&self, s: &ThreePointSample) -> Result<Estimate, EstimatorError> {
        match self {
            Estimator::AdeRate => ade_rate(s),
            Estimator::AdeDecayBase => ade_decay_base(s),
            Estimator::Spe => spe_phase(s),
        }
    }
}

/// First-order shot-noise propagation through the closed form.
pub fn propagate_sigma(estimator: Estimator, s: &ThreePointSample) -> Result<f64, EstimatorError> {
    s.validate()?;
    let sig = s.point_sigmas();
    match estimator {
        Estimator::AdeRate | Estimator::AdeDecayBase => {
            let d = s.step()?;
            let c = ade_ratio(s)?;
            let x = ade_x(c)?;
            let dx_dc = 0.5 / (c - 0.75).sqrt();
            let dv_dx = match estimator {
                Estimator::AdeRate => -1.0 / (d * x),
                _ => x.powf(1.0 / d - 1.0) / d,
            };
            let g = ade_ratio_grad(s).map(|gc| dv_dx * dx_dc * gc);
            Ok(combine(g, sig))
        }
        Estimator::Spe => {
            spe_value(s)?;
            let (y, z) = spe_components(s);
            let r2 = y * y + z * z;
            let (ty, tz) = (z / r2, -y / r2);
            Ok(combine([ty - tz, 2.0 * tz, -ty - tz], sig))
        }
    }
}

/// Successes out of shots at one sampling point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotCounts {
    pub successes: u64,
    pub shots: u64,
}

/// Bootstrap estimate together with the count of failed replicates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: Estimate,
    pub invalid: usize,
    pub replicates: usize,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resample each point's shots with replacement and re-evaluate.
///
/// Resampling `n` binary shots with `k` successes is a Binomial(n, k/n)
/// draw. Replicate `r` uses its own stream, so results do not depend on
/// evaluation order. The central value is the replicate median and sigma is
/// half the central 68.27% interval.
pub fn bootstrap(
    estimator: Estimator,
    counts: &[ShotCounts; 3],
    coords: [f64; 3],
    replicates: usize,
    seed: u64,
) -> Result<BootstrapResult, EstimatorError> {
    if replicates < 2 {
        return Err(EstimatorError::InvalidInput(format!(
            "bootstrap needs at least 2 replicates, got {replicates}"
        )));
    }
    if counts.iter().any(|c| c.shots == 0 || c.successes > c.shots) {
        return Err(EstimatorError::InvalidInput(
            "inconsistent shot counts".into(),
        ));
    }
    let n = counts.map(|c| c.shots);
    let k0 = counts.map(|c| c.successes);
    // Phases are unwrapped around the point estimate so that replicates
    // straddling ±π do not inflate the spread.
    let center = match estimator {
        Estimator::Spe => estimator
            .evaluate(&ThreePointSample::from_counts(k0, n, coords))
            .ok(),
        _ => None,
    };
    let mut values = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let k =
            counts.map(|c| sample_shots(c.successes as f64 / c.shots as f64, c.shots, &mut rng));
        if let Ok(v) = estimator.evaluate(&ThreePointSample::from_counts(k, n, coords)) {
            values.push(match center {
                Some(c) => c + wrap_phase(v - c),
                None => v,
            });
        }
    }
    let invalid = replicates - values.len();
    if 2 * invalid > replicates {
        return Err(EstimatorError::TooManyInvalidReplicates {
            failed: invalid,
            total: replicates,
        });
    }
    values.sort_by(f64::total_cmp);
    let median = quantile_sorted(&values, 0.5);
    let median = if center.is_some() {
        wrap_phase(median)
    } else {
        median
    };
    let lo = quantile_sorted(&values, 0.158_655_253_931_457);
    let hi = quantile_sorted(&values, 0.841_344_746_068_543);
    Ok(BootstrapResult {
        estimate: Estimate {
            value: median,
            sigma: 0.5 * (hi - lo),
            shots_used: n.iter().sum(),
            t_decision: 0.0,
            method: Method::Bootstrap,
        },
        invalid,
        replicates,
    })
}
