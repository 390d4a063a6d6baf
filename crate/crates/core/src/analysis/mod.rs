//! Offline analysis of campaign time series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::CycleRecord;
use crate::optimizers::golden_section;

mod scaling;
pub use scaling::*;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Uniformly sampled series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// Timestamps (s).
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    /// Points computed from a shifted (edge) window.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge: Vec<bool>,
}

impl TimeSeries {
    pub fn new(t: Vec<f64>, values: Vec<f64>) -> Result<Self, AnalysisError> {
        if t.len() != values.len() {
            return Err(AnalysisError::InvalidInput(
                "timestamps and values differ in length".into(),
            ));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AnalysisError::InvalidInput(
                "timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            t,
            values,
            sigma: None,
            edge: Vec::new(),
        })
    }

    /// Uniform series starting at 0 with spacing `dt`.
    pub fn uniform(values: Vec<f64>, dt: f64) -> Self {
        Self {
            t: (0..values.len()).map(|i| i as f64 * dt).collect(),
            values,
            sigma: None,
            edge: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sampling interval, checked uniform to 1e-9 relative.
    pub fn dt(&self) -> Result<f64, AnalysisError> {
        if self.t.len() < 2 {
            return Err(AnalysisError::InsufficientData(
                "need at least two samples".into(),
            ));
        }
        let dt = (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64;
        let uniform = self
            .t
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(w[1].abs()));
        if !uniform {
            return Err(AnalysisError::InvalidInput(
                "sampling is not uniform".into(),
            ));
        }
        Ok(dt)
    }
}

fn prefix_sums(y: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(y.len() + 1);
    s.push(0.0);
    let mut acc = 0.0;
    for v in y {
        acc += v;
        s.push(acc);
    }
    s
}

/// Overlapping Allan deviation at averaging factors `ms` (τ = m·dt).
///
/// σ²(τ) = Σ_{i<N−2m} (ȳ_{i+m} − ȳ_i)² / (2(N − 2m)), with ȳ_i the mean of
/// `m` samples starting at `i`. Needs N ≥ 3m.
pub fn allan_deviation(y: &[f64], dt: f64, ms: &[usize]) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let n = y.len();
    // Allan variance is shift invariant; referencing to y[0] keeps the
    // prefix sums small and makes constant input exact.
    let y0 = y.first().copied().unwrap_or(0.0);
    let shifted: Vec<f64> = y.iter().map(|v| v - y0).collect();
    let s = prefix_sums(&shifted);
    // Deviations at rounding level of the input count as zero.
    let tol = 8.0 * f64::EPSILON * y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    ms.iter()
        .map(|&m| {
            if m == 0 || n < 3 * m {
                return Err(AnalysisError::InsufficientData(format!(
                    "m = {m} needs at least {} samples, have {n}",
                    3 * m.max(1)
                )));
            }
            let mean = |i: usize| (s[i + m] - s[i]) / m as f64;
            let terms = n - 2 * m;
            let sum: f64 = (0..terms).map(|i| (mean(i + m) - mean(i)).powi(2)).sum();
            let adev = (sum / (2.0 * terms as f64)).sqrt();
            Ok((m as f64 * dt, if adev <= tol { 0.0 } else { adev }))
        })
        .collect()
}

/// Roughly log-spaced averaging factors from 1 to n/3.
pub fn log_spaced_factors(n: usize, per_decade: usize) -> Vec<usize> {
    let max = n / 3;
    let mut out: Vec<usize> = Vec::new();
    if max == 0 {
        return out;
    }
    let steps = ((max as f64).log10() * per_decade as f64).floor() as usize;
    for k in 0..=steps {
        let m = 10f64.powf(k as f64 / per_decade as f64).round() as usize;
        if m >= 1 && m <= max && out.last() != Some(&m) {
            out.push(m);
        }
    }
    out
}

/// Allan variance of a Gauss–Markov process with variance q/2 and
/// correlation time `tau_c`.
pub fn lorentzian_avar(tau: f64, q: f64, tau_c: f64) -> f64 {
    let x = tau / tau_c;
    if x < 1e-4 {
        // Series expansion avoids cancellation: q·x/3 to leading order.
        return q * (x / 3.0 - x * x / 12.0);
    }
    q / x * (1.0 - (3.0 - 4.0 * (-x).exp() + (-2.0 * x).exp()) / (2.0 * x))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllanFit {
    /// White coefficient: σ²_W = W²/τ.
    pub white: f64,
    /// Flicker floor: σ²_F = F².
    pub flicker: f64,
    /// Lorentzian amplitude q.
    pub lorentz_q: f64,
    pub tau_c: f64,
    /// RMS residual of ln σ² (decade-weighted).
    pub residual: f64,
    pub degenerate: bool,
}

impl AllanFit {
    pub fn avar(&self, tau: f64) -> f64 {
        self.white * self.white / tau
            + self.flicker * self.flicker
            + lorentzian_avar(tau, self.lorentz_q, self.tau_c)
    }

    /// Allan deviation with the white term removed.
    pub fn without_white(&self, tau: f64) -> f64 {
        (self.avar(tau) - self.white * self.white / tau)
            .max(0.0)
            .sqrt()
    }
}

/// Non-negative least squares over three columns by active-set enumeration.
fn nnls3(cols: &[[f64; 3]], rhs: &[f64], weights: &[f64]) -> [f64; 3] {
    let mut best = ([0.0; 3], f64::INFINITY);
    for mask in 1u8..8 {
        let idx: Vec<usize> = (0..3).filter(|k| mask & (1 << k) != 0).collect();
        let k = idx.len();
        let mut ata = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut atb = nalgebra::DVector::<f64>::zeros(k);
        for ((row, &b), &w) in cols.iter().zip(rhs).zip(weights) {
            for (a, &i) in idx.iter().enumerate() {
                atb[a] += w * row[i] * b;
                for (c, &j) in idx.iter().enumerate() {
                    ata[(a, c)] += w * row[i] * row[j];
                }
            }
        }
        let Some(sol) = ata.lu().solve(&atb) else {
            continue;
        };
        if sol.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            continue;
        }
        let mut x = [0.0; 3];
        for (a, &i) in idx.iter().enumerate() {
            x[i] = sol[a];
        }
        let ssr: f64 = cols
            .iter()
            .zip(rhs)
            .zip(weights)
            .map(|((row, &b), &w)| w * (row[0] * x[0] + row[1] * x[1] + row[2] * x[2] - b).powi(2))
            .sum();
        if ssr < best.1 {
            best = (x, ssr);
        }
    }
    best.0
}

/// Weight per point so that every decade of τ counts equally.
fn decade_weights(taus: &[f64]) -> Vec<f64> {
    let decade = |t: f64| t.log10().floor() as i64;
    taus.iter()
        .map(|&t| {
            let d = decade(t);
            1.0 / taus.iter().filter(|&&u| decade(u) == d).count() as f64
        })
        .collect()
}

/// Fit σ²(τ) = W²/τ + F² + L(τ; q, τ_c) to an Allan deviation curve.
///
/// For each τ_c on a log grid the three amplitudes are a non-negative
/// linear solve in relative error; the best τ_c is then refined by
/// golden-section search in log τ_c.
pub fn fit_allan_models(curve: &[(f64, f64)]) -> Result<AllanFit, AnalysisError> {
    if curve.len() < 6 {
        return Err(AnalysisError::InsufficientData(format!(
            "need at least 6 τ points, have {}",
            curve.len()
        )));
    }
    if curve.iter().any(|(t, a)| !(*t > 0.0) || !(*a >= 0.0)) {
        return Err(AnalysisError::InvalidInput(
            "τ must be positive and deviations non-negative".into(),
        ));
    }
    let taus: Vec<f64> = curve.iter().map(|c| c.0).collect();
    if curve.iter().all(|c| c.1 == 0.0) {
        return Ok(AllanFit {
            white: 0.0,
            flicker: 0.0,
            lorentz_q: 0.0,
            tau_c: taus[0],
            residual: 0.0,
            degenerate: true,
        });
    }
    let avar: Vec<f64> = curve.iter().map(|c| c.1 * c.1).collect();
    let floor = avar
        .iter()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min)
        * 1e-6;
    let dw = decade_weights(&taus);
    // Relative-error weights approximate a log-space fit.
    let weights: Vec<f64> = avar
        .iter()
        .zip(&dw)
        .map(|(v, w)| w / v.max(floor).powi(2))
        .collect();

    let solve = |tau_c: f64| {
        let cols: Vec<[f64; 3]> = taus
            .iter()
            .map(|&t| [1.0 / t, 1.0, lorentzian_avar(t, 1.0, tau_c)])
            .collect();
        let x = nnls3(&cols, &avar, &weights);
        let fit = AllanFit {
            white: x[0].sqrt(),
            flicker: x[1].sqrt(),
            lorentz_q: x[2],
            tau_c,
            residual: 0.0,
            degenerate: false,
        };
        let num: f64 = taus
            .iter()
            .zip(&avar)
            .zip(&dw)
            .map(|((&t, &v), &w)| w * ((fit.avar(t).max(floor)).ln() - v.max(floor).ln()).powi(2))
            .sum();
        let res = (num / dw.iter().sum::<f64>()).sqrt();
        AllanFit {
            residual: res,
            ..fit
        }
    };

    let (lo, hi) = ((taus[0] / 10.0).ln(), (taus[taus.len() - 1] * 10.0).ln());
    let n_grid = 60;
    let grid: Vec<f64> = (0..=n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / n_grid as f64)
        .collect();
    let (i_best, _) = grid
        .iter()
        .map(|&g| solve(g.exp()).residual)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let a = grid[i_best.saturating_sub(1)];
    let b = grid[(i_best + 1).min(n_grid)];
    let g = golden_section(
        |x| Ok::<_, std::convert::Infallible>(-solve(x.exp()).residual),
        a,
        b,
        40,
    )
    .expect("infallible");
    let fit = solve(g.x_best.exp());
    if !fit.residual.is_finite() {
        return Err(AnalysisError::FitFailure(format!(
            "residual {}",
            fit.residual
        )));
    }
    Ok(fit)
}

/// Centered moving mean with shifted full windows at the edges.
///
/// Window `i` covers `[i − (w−1)/2, i − (w−1)/2 + w)`, shifted to stay inside
/// the series; shifted points are flagged in `edge`.
pub fn rolling_average(series: &TimeSeries, window: usize) -> Result<TimeSeries, AnalysisError> {
    let n = series.len();
    if window == 0 || window > n {
        return Err(AnalysisError::InvalidInput(format!(
            "window must lie in [1, {n}], got {window}"
        )));
    }
    let s = prefix_sums(&series.values);
    let half = (window - 1) / 2;
    let mut values = Vec::with_capacity(n);
    let mut edge = Vec::with_capacity(n);
    for i in 0..n {
        let want = i as isize - half as isize;
        let start = want.clamp(0, (n - window) as isize) as usize;
        values.push((s[start + window] - s[start]) / window as f64);
        edge.push(start as isize != want);
    }
    Ok(TimeSeries {
        t: series.t.clone(),
        values,
        sigma: None,
        edge,
    })
}

/// Every `factor`-th point starting at index 0.
pub fn downsample(series: &TimeSeries, factor: usize) -> Result<TimeSeries, AnalysisError> {
    if factor == 0 {
        return Err(AnalysisError::InvalidInput(
            "factor must be at least 1".into(),
        ));
    }
    let pick = |v: &Vec<f64>| v.iter().step_by(factor).copied().collect::<Vec<_>>();
    Ok(TimeSeries {
        t: pick(&series.t),
        values: pick(&series.values),
        sigma: series.sigma.as_ref().map(pick),
        edge: series.edge.iter().step_by(factor).copied().collect(),
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(AnalysisError::InsufficientData(format!(
            "need equal lengths of at least 3, have {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 {
        return Err(AnalysisError::ZeroVariance("x"));
    }
    if syy <= 0.0 {
        return Err(AnalysisError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r after smoothing both series with a `window`-point rolling
/// average, over points where neither window was shifted.
pub fn correlation(x: &TimeSeries, y: &TimeSeries, window: usize) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidInput(
            "series differ in length".into(),
        ));
    }
    let sx = rolling_average(x, window)?;
    let sy = rolling_average(y, window)?;
    let keep: Vec<usize> = (0..sx.len())
        .filter(|&i| !sx.edge[i] && !sy.edge[i])
        .collect();
    let a: Vec<f64> = keep.iter().map(|&i| sx.values[i]).collect();
    let b: Vec<f64> = keep.iter().map(|&i| sy.values[i]).collect();
    pearson(&a, &b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaCorrelation {
    /// Smoothing time (s).
    pub tau: f64,
    pub window: usize,
    pub c_a: Option<f64>,
    pub c_b: Option<f64>,
    /// C(ε_B, x; τ) − C(ε_A, x; τ); absent when either correlation failed.
    pub delta: Option<f64>,
}

/// ΔC(x; τ) for each smoothing time in `taus` (s).
pub fn delta_correlation(
    eps_a: &TimeSeries,
    eps_b: &TimeSeries,
    channel: &TimeSeries,
    taus: &[f64],
) -> Result<Vec<DeltaCorrelation>, AnalysisError> {
    let dt = channel.dt()?;
    Ok(taus
        .iter()
        .map(|&tau| {
            let window = ((tau / dt).round() as usize).max(1);
            let c_a = correlation(eps_a, channel, window).ok();
            let c_b = correlation(eps_b, channel, window).ok();
            DeltaCorrelation {
                tau,
                window,
                c_a,
                c_b,
                delta: c_a.zip(c_b).map(|(a, b)| b - a),
            }
        })
        .collect())
}

/// Named per-cycle quantities that can be pulled out of campaign records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    EpsA,
    EpsB,
    Gamma1,
    DeltaF,
    APi,
    APi2,
    TrueGamma1,
    TrueF01,
}

impl Channel {
    pub const ALL: [Channel; 8] = [
        Channel::EpsA,
        Channel::EpsB,
        Channel::Gamma1,
        Channel::DeltaF,
        Channel::APi,
        Channel::APi2,
        Channel::TrueGamma1,
        Channel::TrueF01,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Channel::EpsA => "eps_a",
            Channel::EpsB => "eps_b",
            Channel::Gamma1 => "gamma1",
            Channel::DeltaF => "delta_f",
            Channel::APi => "a_pi",
            Channel::APi2 => "a_pi2",
            Channel::TrueGamma1 => "true_gamma1",
            Channel::TrueF01 => "true_f01",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn get(&self, r: &CycleRecord) -> Option<f64> {
        match self {
            Channel::EpsA => r.eps_a,
            Channel::EpsB => r.eps_b,
            Channel::Gamma1 => r.gamma1_hat,
            Channel::DeltaF => Some(r.delta_f_hat),
            Channel::APi => Some(r.a_pi),
            Channel::APi2 => Some(r.a_pi2),
            Channel::TrueGamma1 => Some(r.truth.gamma1),
            Channel::TrueF01 => Some(r.truth.f01),
        }
    }
}

/// Aligned series for `channels`, over cycles where every channel is present.
///
/// Times are the nominal cycle starts, `cycle · cadence`.
pub fn extract_series(
    records: &[CycleRecord],
    channels: &[Channel],
    cadence_s: f64,
) -> Vec<TimeSeries> {
    let rows: Vec<(usize, Vec<f64>)> = records
        .iter()
        .filter_map(|r| {
            let vals: Option<Vec<f64>> = channels.iter().map(|c| c.get(r)).collect();
            vals.map(|v| (r.cycle, v))
        })
        .collect();
    (0..channels.len())
        .map(|k| TimeSeries {
            t: rows.iter().map(|(c, _)| *c as f64 * cadence_s).collect(),
            values: rows.iter().map(|(_, v)| v[k]).collect(),
            sigma: None,
            edge: Vec::new(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::GaussMarkovProcess;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn slope(curve: &[(f64, f64)]) -> f64 {
        let xs: Vec<f64> = curve.iter().map(|c| c.0.ln()).collect();
        let ys: Vec<f64> = curve.iter().map(|c| c.1.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        num / den
    }

    #[test]
    fn constant_series_has_zero_adev() {
        let c = allan_deviation(&vec![3.3; 100], 1.0, &[1, 2, 5, 10, 33]).unwrap();
        assert!(c.iter().all(|p| p.1 == 0.0));
        assert!(allan_deviation(&[0.0; 10], 1.0, &[4]).is_err());
    }

    #[test]
    fn white_noise_slope() {
        let y = white(100_000, 1);
        let c = allan_deviation(&y, 1.0, &[1, 2, 5, 10, 20, 50, 100]).unwrap();
        let s = slope(&c);
        assert!((s + 0.5).abs() < 0.05, "{s}");
    }

    #[test]
    fn ramp_closed_form() {
        let k = 0.37;
        let dt = 0.5;
        let y: Vec<f64> = (0..1000).map(|i| k * i as f64 * dt).collect();
        for (tau, a) in allan_deviation(&y, dt, &[1, 3, 10, 100, 333]).unwrap() {
            let want = k * tau / 2f64.sqrt();
            assert!((a / want - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn lorentzian_model_matches_monte_carlo() {
        // Finely sampled Gauss–Markov path: sample-average Allan variance
        // approaches the continuous-time formula with q = 2·stddev².
        let (s, tau_c, dt) = (1.0, 10.0, 0.05);
        let mut gm = GaussMarkovProcess {
            mean: 0.0,
            stddev: s,
            tau_c,
            value: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..2_000_000).map(|_| gm.step(dt, &mut rng)).collect();
        for (tau, a) in allan_deviation(&y, dt, &[20, 100, 200, 400, 1000]).unwrap() {
            let model = lorentzian_avar(tau, 2.0 * s * s, tau_c).sqrt();
            assert!((a / model - 1.0).abs() < 0.08, "τ={tau}: {a} vs {model}");
        }
        // Peak of the Allan deviation near 1.89 τ_c.
        let grid: Vec<f64> = (1..2000).map(|i| i as f64 * 0.05).collect();
        let peak = grid
            .iter()
            .copied()
            .max_by(|a, b| lorentzian_avar(*a, 1.0, 1.0).total_cmp(&lorentzian_avar(*b, 1.0, 1.0)))
            .unwrap();
        assert!((peak - 1.89).abs() < 0.05, "{peak}");
    }

    #[test]
    fn fit_white_only() {
        let y = white(100_000, 2);
        let ms = log_spaced_factors(y.len(), 5);
        let c = allan_deviation(&y, 1.0, &ms).unwrap();
        let f = fit_allan_models(&c).unwrap();
        let w = f.white * f.white;
        assert!(f.flicker * f.flicker < 0.05 * w, "{f:?}");
        assert!(
            lorentzian_avar(1.0, f.lorentz_q, f.tau_c) < 0.05 * w,
            "{f:?}"
        );
    }

    #[test]
    fn fit_gauss_markov_tau_c() {
        let mut gm = GaussMarkovProcess {
            mean: 0.0,
            stddev: 1.0,
            tau_c: 10.0,
            value: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let meas = white(200_000, 6);
        let y: Vec<f64> = meas
            .iter()
            .map(|e| gm.step(0.29, &mut rng) + 0.3 * e)
            .collect();
        let ms = log_spaced_factors(y.len(), 6);
        let c = allan_deviation(&y, 0.29, &ms).unwrap();
        let f = fit_allan_models(&c).unwrap();
        assert!(f.tau_c > 5.0 && f.tau_c < 20.0, "{f:?}");
    }

    #[test]
    fn rounding_level_jitter_is_constant() {
        let y: Vec<f64> = (0..300)
            .map(|i| 1.0 / 18.3 + if i % 2 == 0 { 0.0 } else { 1e-17 })
            .collect();
        let c = allan_deviation(&y, 1.0, &log_spaced_factors(300, 8)).unwrap();
        assert!(c.iter().all(|p| p.1 == 0.0));
        assert!(fit_allan_models(&c).unwrap().degenerate);
    }

    #[test]
    fn degenerate_fit() {
        let c: Vec<(f64, f64)> = (1..10).map(|i| (i as f64, 0.0)).collect();
        let f = fit_allan_models(&c).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.white, 0.0);
    }

    #[test]
    fn rolling_examples() {
        let s = TimeSeries::uniform(vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0], 1.0);
        assert_eq!(rolling_average(&s, 1).unwrap().values, s.values);
        let r2 = rolling_average(&s, 2).unwrap();
        assert!(r2.values.iter().all(|v| v.abs() < 1e-15));
        let rn = rolling_average(&s, 7).unwrap();
        let mean = 1.0 / 7.0;
        assert!(rn.values.iter().all(|v| (v - mean).abs() < 1e-15));
        assert!(rolling_average(&s, 8).is_err());
    }

    #[test]
    fn downsample_examples() {
        let s = TimeSeries::uniform((0..74_525).map(f64::from).collect(), 0.29);
        assert_eq!(downsample(&s, 1).unwrap(), s);
        let d = downsample(&s, 100).unwrap();
        assert_eq!(d.len(), 746);
        assert_eq!(d.values[1], 100.0);
    }

    #[test]
    fn smooth_then_decimate_commutes_with_offsets() {
        let s = TimeSeries::uniform(white(1000, 9), 1.0);
        let sm = rolling_average(&s, 10).unwrap();
        let a = downsample(&sm, 10).unwrap();
        for (k, v) in a.values.iter().enumerate() {
            assert_eq!(*v, sm.values[10 * k]);
        }
    }

    #[test]
    fn correlation_examples() {
        let x = TimeSeries::uniform(white(1000, 3), 1.0);
        let y = TimeSeries::uniform(x.values.iter().map(|v| -2.0 * v + 5.0).collect(), 1.0);
        assert!((correlation(&x, &x, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation(&x, &y, 1).unwrap() + 1.0).abs() < 1e-12);

        let a = TimeSeries::uniform(white(10_000, 4), 1.0);
        let b = TimeSeries::uniform(white(10_000, 5), 1.0);
        assert!(correlation(&a, &b, 1).unwrap().abs() < 0.05);

        let flat = TimeSeries::uniform(vec![1.0; 100], 1.0);
        assert!(matches!(
            correlation(&flat, &a.clone().tap(100), 1),
            Err(AnalysisError::ZeroVariance(_))
        ));
    }

    trait Tap {
        fn tap(self, n: usize) -> Self;
    }

    impl Tap for TimeSeries {
        fn tap(mut self, n: usize) -> Self {
            self.t.truncate(n);
            self.values.truncate(n);
            self
        }
    }

    #[test]
    fn delta_correlation_identical_is_zero() {
        let e = TimeSeries::uniform(white(500, 1), 0.29);
        let x = TimeSeries::uniform(white(500, 2), 0.29);
        for d in delta_correlation(&e, &e, &x, &[0.29, 2.9, 29.0]).unwrap() {
            assert_eq!(d.delta, Some(0.0));
        }
    }

    proptest! {
        #[test]
        fn adev_homogeneous(k in -10.0f64..10.0, seed in 0u64..50) {
            let y = white(300, seed);
            let ky: Vec<f64> = y.iter().map(|v| k * v).collect();
            let a = allan_deviation(&y, 1.0, &[1, 4, 16, 64]).unwrap();
            let b = allan_deviation(&ky, 1.0, &[1, 4, 16, 64]).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((q.1 - k.abs() * p.1).abs() <= 1e-9 * (1.0 + q.1));
            }
        }

        #[test]
        fn correlation_affine_invariant(a in 0.1f64..10.0, b in -5.0f64..5.0, seed in 0u64..50, w in 1usize..10) {
            let x = TimeSeries::uniform(white(200, seed), 1.0);
            let y = TimeSeries::uniform(white(200, seed + 1000), 1.0);
            let yt = TimeSeries::uniform(y.values.iter().map(|v| a * v + b).collect(), 1.0);
            let r1 = correlation(&x, &y, w).unwrap();
            let r2 = correlation(&x, &yt, w).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }
}
