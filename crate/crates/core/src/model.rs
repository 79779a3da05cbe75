//! Shared domain types: regimes, system parameters, occupancy vectors and the
//! weighted norm used to compare them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on monotonicity and range checks before a vector is rejected.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Default truncation level for occupancy vectors.
pub const DEFAULT_TRUNCATION: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("lambda out of range (0,1): {0}")]
    LambdaOutOfRange(f64),
    #[error("server count must be positive")]
    NoServers,
    #[error("memory exceeds n: c(n)={capacity} > n={n}")]
    MemoryExceedsN { capacity: usize, n: usize },
    #[error("nonpositive rate: {name}={value}")]
    NonPositiveRate { name: &'static str, value: f64 },
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("invalid occupancy vector: {0}")]
    InvalidOccupancy(String),
}

/// Dispatching policy together with its fluid-limit parameters.
///
/// The first three variants are the token-based pull policy in its three
/// scalings; the rest are the baselines it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Memory grows with n, constant message rate `mu` per idle server.
    HighMemory { mu: f64 },
    /// Constant memory `c`, message rate grows with n.
    HighMessage { c: usize },
    /// Constant memory `c` and constant message rate `mu`.
    Constrained { c: usize, mu: f64 },
    RandomRouting,
    PowerOfD { d: usize },
    /// Join-idle-queue: one token per idle server, registered instantly.
    Pull,
}

impl Regime {
    /// Constrained regime parameterized by the per-server message budget
    /// `alpha`, i.e. `mu = alpha / (1 - lambda)`.
    pub fn constrained_with_alpha(lambda: f64, alpha: f64, c: usize) -> Self {
        Regime::Constrained {
            c,
            mu: alpha / (1.0 - lambda),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::HighMemory { .. } => "high_memory",
            Regime::HighMessage { .. } => "high_message",
            Regime::Constrained { .. } => "constrained",
            Regime::RandomRouting => "random_routing",
            Regime::PowerOfD { .. } => "power_of_d",
            Regime::Pull => "pull",
        }
    }

    /// True for the three scalings of the token-based policy.
    pub fn uses_tokens(&self) -> bool {
        matches!(
            self,
            Regime::HighMemory { .. } | Regime::HighMessage { .. } | Regime::Constrained { .. }
        )
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(ModelError::NonPositiveRate { name, value })
            }
        };
        match *self {
            Regime::HighMemory { mu } => positive("mu", mu),
            Regime::HighMessage { c } => {
                if c == 0 {
                    Err(ModelError::InvalidRegime("high_message requires c >= 1".into()))
                } else {
                    Ok(())
                }
            }
            Regime::Constrained { c, mu } => {
                if c == 0 {
                    return Err(ModelError::InvalidRegime("constrained requires c >= 1".into()));
                }
                positive("mu", mu)
            }
            Regime::PowerOfD { d } => {
                if d == 0 {
                    Err(ModelError::InvalidRegime("power_of_d requires d >= 1".into()))
                } else {
                    Ok(())
                }
            }
            Regime::RandomRouting | Regime::Pull => Ok(()),
        }
    }
}

/// A closed-form function of the server count, used for c(n) and mu(n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { value: f64 },
    /// `a * ln(n)`
    Log { a: f64 },
    /// `a * n^p`
    Power { a: f64, p: f64 },
}

impl Schedule {
    pub const fn constant(value: f64) -> Self {
        Schedule::Constant { value }
    }

    /// The identity schedule `n`.
    pub const fn linear() -> Self {
        Schedule::Power { a: 1.0, p: 1.0 }
    }

    pub fn eval(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            Schedule::Constant { value } => value,
            Schedule::Log { a } => a * n.ln(),
            Schedule::Power { a, p } => a * n.powf(p),
        }
    }

    /// Integer evaluation, rounded down.
    pub fn eval_count(&self, n: usize) -> usize {
        let v = self.eval(n);
        if v.is_finite() && v > 0.0 {
            v.floor() as usize
        } else {
            0
        }
    }
}

/// Parameters of one n-server system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: usize,
    pub lambda: f64,
    pub regime: Regime,
    /// Dispatcher memory c(n).
    pub memory: Schedule,
    /// Idle-server message rate mu(n).
    pub idle_rate: Schedule,
}

impl SystemParams {
    /// Builds parameters with the schedules implied by the regime: the
    /// unbounded axis of High Memory / High Message defaults to `n`.
    pub fn new(n: usize, lambda: f64, regime: Regime) -> Self {
        let (memory, idle_rate) = match regime {
            Regime::HighMemory { mu } => (Schedule::linear(), Schedule::constant(mu)),
            Regime::HighMessage { c } => (Schedule::constant(c as f64), Schedule::linear()),
            Regime::Constrained { c, mu } => (Schedule::constant(c as f64), Schedule::constant(mu)),
            Regime::Pull => (Schedule::linear(), Schedule::constant(0.0)),
            Regime::RandomRouting | Regime::PowerOfD { .. } => {
                (Schedule::constant(0.0), Schedule::constant(0.0))
            }
        };
        SystemParams {
            n,
            lambda,
            regime,
            memory,
            idle_rate,
        }
    }

    pub fn with_memory(mut self, memory: Schedule) -> Self {
        self.memory = memory;
        self
    }

    pub fn with_idle_rate(mut self, idle_rate: Schedule) -> Self {
        self.idle_rate = idle_rate;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    /// c(n); zero for policies without a token store.
    pub fn capacity(&self) -> usize {
        match self.regime {
            Regime::RandomRouting | Regime::PowerOfD { .. } => 0,
            Regime::Pull => self.n,
            _ => self.memory.eval_count(self.n),
        }
    }

    /// mu(n); zero for policies that never send idle messages.
    pub fn message_rate(&self) -> f64 {
        if self.regime.uses_tokens() {
            self.idle_rate.eval(self.n)
        } else {
            0.0
        }
    }

    pub fn validate(self) -> Result<Self, ModelError> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ModelError::LambdaOutOfRange(self.lambda));
        }
        if self.n == 0 {
            return Err(ModelError::NoServers);
        }
        self.regime.validate()?;
        let capacity = self.capacity();
        if capacity > self.n {
            return Err(ModelError::MemoryExceedsN {
                capacity,
                n: self.n,
            });
        }
        if self.regime.uses_tokens() {
            if capacity == 0 {
                return Err(ModelError::InvalidRegime(format!(
                    "{} evaluates to c(n)=0 at n={}",
                    self.regime.name(),
                    self.n
                )));
            }
            let mu = self.message_rate();
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(ModelError::NonPositiveRate {
                    name: "mu(n)",
                    value: mu,
                });
            }
        }
        Ok(self)
    }
}

/// Truncated occupancy vector `(s_0, s_1, ..., s_K)` with `s_0 = 1` and
/// nonincreasing entries. Coordinates beyond `K` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVector {
    values: Vec<f64>,
}

impl OccupancyVector {
    /// Validates and clamps. Entries may overshoot `[0,1]` or the ordering by
    /// at most [`MONOTONE_SLACK`].
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        Self::with_slack(values, MONOTONE_SLACK)
    }

    pub fn with_slack(mut values: Vec<f64>, slack: f64) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::InvalidOccupancy("empty vector".into()));
        }
        if (values[0] - 1.0).abs() > slack {
            return Err(ModelError::InvalidOccupancy(format!(
                "s_0 must be 1, got {}",
                values[0]
            )));
        }
        values[0] = 1.0;
        for i in 1..values.len() {
            let v = values[i];
            if !v.is_finite() || v < -slack || v > 1.0 + slack {
                return Err(ModelError::InvalidOccupancy(format!(
                    "s_{i}={v} outside [0,1]"
                )));
            }
            if v > values[i - 1] + slack {
                return Err(ModelError::InvalidOccupancy(format!(
                    "s_{i}={v} exceeds s_{}={}",
                    i - 1,
                    values[i - 1]
                )));
            }
            values[i] = v.clamp(0.0, values[i - 1]);
        }
        Ok(OccupancyVector { values })
    }

    /// Builds from `(s_1, s_2, ...)`, prepending `s_0 = 1`.
    pub fn from_tail(tail: &[f64]) -> Result<Self, ModelError> {
        let mut values = Vec::with_capacity(tail.len() + 1);
        values.push(1.0);
        values.extend_from_slice(tail);
        Self::new(values)
    }

    /// The empty system `(1, 0, ..., 0)` at truncation `k`.
    pub fn empty(k: usize) -> Self {
        let mut values = vec![0.0; k + 1];
        values[0] = 1.0;
        OccupancyVector { values }
    }

    /// Clamps into `[0,1]` and enforces monotonicity by cumulative minima,
    /// without rejecting anything. Used to project integrator output.
    pub fn project(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            values.push(1.0);
        }
        values[0] = 1.0;
        let mut prev = 1.0;
        for v in values.iter_mut().skip(1) {
            let x = if v.is_nan() { 0.0 } else { v.clamp(0.0, prev) };
            *v = x;
            prev = x;
        }
        OccupancyVector { values }
    }

    pub fn truncation(&self) -> usize {
        self.values.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `s_i`, zero beyond the truncation level.
    pub fn get(&self, i: usize) -> f64 {
        self.values.get(i).copied().unwrap_or(0.0)
    }

    /// Zero-pads (or cuts) to truncation level `k`.
    pub fn resized(&self, k: usize) -> Self {
        let mut values = self.values.clone();
        values.resize(k + 1, 0.0);
        OccupancyVector { values }
    }

    /// Coordinate-wise `self >= other - slack`.
    pub fn dominates(&self, other: &OccupancyVector, slack: f64) -> bool {
        let k = self.values.len().max(other.values.len());
        (0..k).all(|i| self.get(i) >= other.get(i) - slack)
    }
}

/// `sqrt( sum_i |x_i - y_i|^2 / 2^i )`, zero-padding the shorter vector.
pub fn weighted_norm(x: &OccupancyVector, y: &OccupancyVector) -> f64 {
    let k = x.values.len().max(y.values.len());
    let mut weight = 1.0;
    let mut acc = 0.0;
    for i in 0..k {
        let d = x.get(i) - y.get(i);
        acc += d * d * weight;
        weight *= 0.5;
    }
    acc.sqrt()
}

/// `sum_{i>=1} s_i`: the number of jobs per server.
pub fn total_mass(s: &OccupancyVector) -> f64 {
    total_mass_from(s, 1)
}

/// `sum_{j>=start} s_j`, compensated.
pub fn total_mass_from(s: &OccupancyVector, start: usize) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in s.values.iter().skip(start) {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}
