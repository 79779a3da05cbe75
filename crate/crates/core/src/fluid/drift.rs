use serde::{Deserialize, Serialize};

use crate::model::{ModelError, OccupancyVector, Regime, DEFAULT_TRUNCATION};

/// Parameters of the deterministic fluid model and its integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidParams {
    pub lambda: f64,
    pub regime: Regime,
    /// Truncation level K: coordinates `s_0..s_K` are integrated.
    pub truncation: usize,
    /// Maximum allowed `s_K` along a trajectory.
    pub tail_tol: f64,
    /// Band around `s_1 = 1` treated as the boundary.
    pub boundary_tol: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Spacing of recorded grid points.
    pub output_interval: f64,
}

impl FluidParams {
    pub fn new(lambda: f64, regime: Regime) -> Self {
        FluidParams {
            lambda,
            regime,
            truncation: DEFAULT_TRUNCATION,
            tail_tol: 1e-9,
            boundary_tol: 1e-9,
            rtol: 1e-10,
            atol: 1e-12,
            max_step: 0.1,
            output_interval: 0.1,
        }
    }

    pub fn with_truncation(mut self, k: usize) -> Self {
        self.truncation = k;
        self
    }

    pub fn with_output_interval(mut self, dt: f64) -> Self {
        self.output_interval = dt;
        self.max_step = self.max_step.min(dt);
        self
    }

    pub fn validate(self) -> Result<Self, ModelError> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ModelError::LambdaOutOfRange(self.lambda));
        }
        self.regime.validate()?;
        if self.truncation < 2 {
            return Err(ModelError::InvalidOccupancy("truncation must be at least 2".into()));
        }
        for (name, v) in [
            ("tail_tol", self.tail_tol),
            ("boundary_tol", self.boundary_tol),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("max_step", self.max_step),
            ("output_interval", self.output_interval),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::NonPositiveRate { name, value: v });
            }
        }
        Ok(self)
    }

    /// True when the drift is discontinuous at `s_1 = 1`.
    pub fn has_boundary(&self) -> bool {
        matches!(self.regime, Regime::HighMessage { .. } | Regime::Pull)
    }
}

/// `P_0(s)`: limiting probability that the dispatcher holds no token.
///
/// `None` for power-of-d, which has no token store.
pub fn p0(s: &OccupancyVector, params: &FluidParams) -> Option<f64> {
    p0_raw(s.as_slice(), params)
}

pub(crate) fn p0_raw(s: &[f64], params: &FluidParams) -> Option<f64> {
    let lambda = params.lambda;
    let s1 = s.get(1).copied().unwrap_or(0.0);
    let s2 = s.get(2).copied().unwrap_or(0.0);
    match params.regime {
        Regime::HighMemory { mu } => Some((1.0 - mu * (1.0 - s1) / lambda).max(0.0)),
        Regime::HighMessage { .. } | Regime::Pull => {
            if s1 >= 1.0 - params.boundary_tol {
                Some(sliding_p0(s2, lambda))
            } else {
                Some(0.0)
            }
        }
        Regime::Constrained { c, mu } => Some(constrained_p0(mu * (1.0 - s1) / lambda, c)),
        Regime::RandomRouting => Some(1.0),
        Regime::PowerOfD { .. } => None,
    }
}

/// `[1 - (1 - s_2)/lambda]^+`: the boundary value that keeps `s_1` at 1.
pub(crate) fn sliding_p0(s2: f64, lambda: f64) -> f64 {
    (1.0 - (1.0 - s2) / lambda).max(0.0)
}

/// `[sum_{k=0}^{c} r^k]^{-1}` with `0^0 = 1`.
pub(crate) fn constrained_p0(ratio: f64, c: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for _ in 0..c {
        term *= ratio;
        sum += term;
    }
    1.0 / sum
}

/// Fluid drift `F(s)` with closure `s_{K+1} = 0`; `F_0 = 0`.
pub fn fluid_drift(s: &OccupancyVector, params: &FluidParams) -> Vec<f64> {
    let mut out = vec![0.0; s.as_slice().len()];
    drift_into(s.as_slice(), params, p0_raw(s.as_slice(), params), &mut out);
    out
}

/// Drift with a given `P_0` (ignored for power-of-d).
pub(crate) fn drift_into(s: &[f64], params: &FluidParams, p0: Option<f64>, out: &mut [f64]) {
    let lambda = params.lambda;
    let k = s.len() - 1;
    let at = |i: usize| if i <= k { s[i] } else { 0.0 };
    out[0] = 0.0;
    match (params.regime, p0) {
        (Regime::PowerOfD { d }, _) => {
            let d = d as i32;
            for i in 1..=k {
                out[i] = lambda * (at(i - 1).powi(d) - at(i).powi(d)) - (at(i) - at(i + 1));
            }
        }
        (_, Some(p)) => {
            if k >= 1 {
                out[1] = lambda * (1.0 - p) + lambda * (1.0 - s[1]) * p - (s[1] - at(2));
            }
            for i in 2..=k {
                out[i] = lambda * (s[i - 1] - s[i]) * p - (s[i] - at(i + 1));
            }
        }
        (_, None) => unreachable!("token regimes always define P0"),
    }
}
