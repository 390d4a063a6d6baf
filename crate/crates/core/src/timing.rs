//! Time-to-decision accounting.
//!
//! Every duration is kept as a [`Duration`] (integer nanoseconds), so the
//! five ledger categories add up to the total exactly, with no floating-point
//! drift between a primitive's budget and the simulated clock.

use std::ops::{Add, AddAssign};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Serialize a [`Duration`] as an integer count of nanoseconds.
pub mod duration_ns {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_nanos() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_nanos(u64::deserialize(d)?))
    }
}

/// Milliseconds as `f64`, the unit used in reports.
pub fn ms(d: Duration) -> f64 {
    d.as_nanos() as f64 * 1e-6
}

/// Microseconds as `f64`, the unit used by the device model.
pub fn us(d: Duration) -> f64 {
    d.as_nanos() as f64 * 1e-3
}

/// Round a duration given in microseconds to the nearest nanosecond.
pub fn from_us(us: f64) -> Duration {
    Duration::from_nanos((us.max(0.0) * 1e3).round() as u64)
}

/// Round a duration given in milliseconds to the nearest nanosecond.
pub fn from_ms(ms: f64) -> Duration {
    Duration::from_nanos((ms.max(0.0) * 1e6).round() as u64)
}

/// Per-category decomposition of a time-to-decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingBudget {
    /// Pulse-sequence execution.
    #[serde(rename = "seq_ns", with = "duration_ns")]
    pub seq: Duration,
    /// Readout integration.
    #[serde(rename = "meas_ns", with = "duration_ns")]
    pub meas: Duration,
    /// Qubit reset, active or passive.
    #[serde(rename = "reset_ns", with = "duration_ns")]
    pub reset: Duration,
    /// Estimator / optimizer evaluation.
    #[serde(rename = "analysis_ns", with = "duration_ns")]
    pub analysis: Duration,
    /// Communication round trips to a host computer.
    #[serde(rename = "ping_ns", with = "duration_ns")]
    pub ping: Duration,
}

impl TimingBudget {
    pub fn total(&self) -> Duration {
        self.seq + self.meas + self.reset + self.analysis + self.ping
    }

    pub fn total_ms(&self) -> f64 {
        ms(self.total())
    }
}

impl Add for TimingBudget {
    type Output = TimingBudget;

    fn add(self, rhs: TimingBudget) -> TimingBudget {
        TimingBudget {
            seq: self.seq + rhs.seq,
            meas: self.meas + rhs.meas,
            reset: self.reset + rhs.reset,
            analysis: self.analysis + rhs.analysis,
            ping: self.ping + rhs.ping,
        }
    }
}

impl AddAssign for TimingBudget {
    fn add_assign(&mut self, rhs: TimingBudget) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TimingBudget {
    fn sum<I: Iterator<Item = TimingBudget>>(iter: I) -> TimingBudget {
        iter.fold(TimingBudget::default(), |acc, b| acc + b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyMode {
    /// Analysis and feed-forward run on the controller itself.
    OnController,
    /// Every decision ships data to a host and waits for the reply.
    Offloading,
}

/// Where decisions are computed and what each one costs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub mode: LatencyMode,
    /// Round trip per decision. Ignored in on-controller mode.
    #[serde(rename = "rtt_ns", with = "duration_ns")]
    pub rtt: Duration,
    #[serde(rename = "analysis_time_ns", with = "duration_ns")]
    pub analysis_time: Duration,
}

impl LatencyModel {
    pub fn on_controller(analysis_time: Duration) -> Self {
        Self {
            mode: LatencyMode::OnController,
            rtt: Duration::ZERO,
            analysis_time,
        }
    }

    pub fn offloading(rtt: Duration, analysis_time: Duration) -> Self {
        Self {
            mode: LatencyMode::Offloading,
            rtt,
            analysis_time,
        }
    }

    /// Round trip actually charged per decision.
    pub fn effective_rtt(&self) -> Duration {
        match self.mode {
            LatencyMode::OnController => Duration::ZERO,
            LatencyMode::Offloading => self.rtt,
        }
    }
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::on_controller(Duration::from_micros(1))
    }
}

/// Fold decision costs into the experiment-side parts of a budget.
///
/// `parts` carries seq/meas/reset; its analysis and ping fields are
/// replaced by `n_decisions` times the per-decision analysis time and
/// round trip.
pub fn account(parts: TimingBudget, latency: &LatencyModel, n_decisions: u32) -> TimingBudget {
    TimingBudget {
        analysis: latency.analysis_time * n_decisions,
        ping: latency.effective_rtt() * n_decisions,
        ..parts
    }
}

/// Simulated wall clock with a cumulative per-category ledger.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    #[serde(rename = "t_now_ns", with = "duration_ns")]
    t_now: Duration,
    ledger: TimingBudget,
    #[serde(rename = "idle_ns", with = "duration_ns")]
    idle: Duration,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Duration {
        self.t_now
    }

    pub fn ledger(&self) -> &TimingBudget {
        &self.ledger
    }

    /// Idle padding inserted between cycles; not part of any budget.
    pub fn idle(&self) -> Duration {
        self.idle
    }

    pub fn charge(&mut self, budget: &TimingBudget) {
        self.t_now += budget.total();
        self.ledger += *budget;
    }

    pub fn wait(&mut self, d: Duration) {
        self.t_now += d;
        self.idle += d;
    }

    /// Pad with idle time until `t`; never moves the clock backwards.
    pub fn wait_until(&mut self, t: Duration) {
        if t > self.t_now {
            self.wait(t - self.t_now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parts() -> TimingBudget {
        TimingBudget {
            seq: Duration::from_nanos(1_234_567),
            meas: Duration::from_micros(150),
            reset: Duration::from_nanos(155_321),
            ..Default::default()
        }
    }

    #[test]
    fn on_controller_never_pings() {
        let lat = LatencyModel::on_controller(Duration::from_micros(1));
        for n in [0, 1, 7, 1000] {
            assert_eq!(account(parts(), &lat, n).ping, Duration::ZERO);
        }
    }

    #[test]
    fn lan_three_decisions_adds_75ms() {
        let on = account(
            parts(),
            &LatencyModel::on_controller(Duration::from_micros(1)),
            3,
        );
        let off = account(
            parts(),
            &LatencyModel::offloading(Duration::from_millis(25), Duration::from_micros(1)),
            3,
        );
        assert_eq!(off.total() - on.total(), Duration::from_millis(75));
    }

    #[test]
    fn wifi_single_decision() {
        let off = account(
            TimingBudget::default(),
            &LatencyModel::offloading(Duration::from_millis(105), Duration::ZERO),
            1,
        );
        assert_eq!(off.ping, Duration::from_millis(105));
        assert_eq!(off.total(), Duration::from_millis(105));
    }

    #[test]
    fn clock_is_monotone_and_ledger_adds_up() {
        let mut clock = SimClock::new();
        let b = account(parts(), &LatencyModel::default(), 2);
        clock.charge(&b);
        let t1 = clock.now();
        clock.wait_until(Duration::from_nanos(10));
        assert_eq!(clock.now(), t1);
        clock.charge(&b);
        assert_eq!(clock.now(), b.total() * 2);
        assert_eq!(clock.ledger().total(), clock.now());
    }
}
