//! Fixed points of the fluid model and the closed-form delays derived from
//! them.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::drift::{constrained_p0, FluidParams};
use super::FluidError;
use crate::io::write_key_values;
use crate::model::{total_mass, OccupancyVector, Regime};

/// Geometric tails are extended until the next coordinate drops below this.
const TAIL_CUTOFF: f64 = 1e-18;
const MAX_EQUILIBRIUM_LEVELS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub p0_star: f64,
    /// `s_i* = lambda (lambda P0*)^(i-1)`, long enough that the omitted tail
    /// is negligible.
    pub s_star: OccupancyVector,
    /// Asymptotic mean waiting time `lambda P0* / (1 - lambda P0*)`.
    pub delay: f64,
}

impl Equilibrium {
    /// Flat `key=value` record.
    pub fn write_record<W: Write>(&self, mut w: W, params: &FluidParams, prefix: usize) -> io::Result<()> {
        let shown: Vec<String> = (1..=prefix).map(|i| self.s_star.get(i).to_string()).collect();
        write_key_values(
            &mut w,
            &[
                ("lambda", params.lambda.to_string()),
                ("regime", params.regime.name().to_string()),
                ("p0_star", self.p0_star.to_string()),
                ("delay", self.delay.to_string()),
                ("s_star_prefix", shown.join(",")),
                ("mass", total_mass(&self.s_star).to_string()),
            ],
        )
    }
}

/// `P0*` for each token regime; `None` for power-of-d.
pub fn equilibrium_p0(lambda: f64, regime: &Regime) -> Option<f64> {
    match *regime {
        Regime::HighMemory { mu } => Some((1.0 - mu * (1.0 - lambda) / lambda).max(0.0)),
        Regime::HighMessage { .. } | Regime::Pull => Some(0.0),
        Regime::Constrained { c, mu } => Some(constrained_p0(mu * (1.0 - lambda) / lambda, c)),
        Regime::RandomRouting => Some(1.0),
        Regime::PowerOfD { .. } => None,
    }
}

/// The unique equilibrium of the fluid model.
pub fn equilibrium(params: &FluidParams) -> Result<Equilibrium, FluidError> {
    let params = params.validate()?;
    let lambda = params.lambda;
    let p0_star = equilibrium_p0(lambda, &params.regime).ok_or_else(|| {
        FluidError::Unsupported("power-of-d has no token equilibrium; use power_of_d_equilibrium".into())
    })?;
    let ratio = lambda * p0_star;
    let mut values = vec![1.0];
    let mut s = lambda;
    while values.len() <= params.truncation || s > TAIL_CUTOFF {
        if values.len() > MAX_EQUILIBRIUM_LEVELS {
            return Err(FluidError::Unsupported(format!(
                "equilibrium tail ratio {ratio} too close to 1"
            )));
        }
        values.push(s);
        s *= ratio;
    }
    Ok(Equilibrium {
        p0_star,
        s_star: OccupancyVector::project(values),
        delay: ratio / (1.0 - ratio),
    })
}

/// Fixed point of the power-of-d fluid model, `s_i = lambda^((d^i - 1)/(d - 1))`.
pub fn power_of_d_equilibrium(lambda: f64, d: usize, truncation: usize) -> OccupancyVector {
    let mut values = vec![1.0];
    let mut exponent = 1.0f64;
    for _ in 0..truncation {
        values.push(lambda.powf(exponent));
        exponent = exponent * d as f64 + 1.0;
    }
    OccupancyVector::project(values)
}

/// Little's law: `(1/lambda) sum_{i>=1} s_i - 1`.
pub fn delay_from_equilibrium(s_star: &OccupancyVector, lambda: f64) -> f64 {
    (total_mass(s_star) / lambda - 1.0).max(0.0)
}

/// Constrained-regime delay with per-server message budget `alpha`
/// (`mu = alpha / (1 - lambda)`):
/// `lambda / (1 - lambda + sum_{k=1}^c (alpha/lambda)^k)`.
pub fn constrained_delay(lambda: f64, alpha: f64, c: usize) -> f64 {
    let r = alpha / lambda;
    let mut term = 1.0;
    let mut sum = 0.0;
    for _ in 0..c {
        term *= r;
        sum += term;
    }
    lambda / (1.0 - lambda + sum)
}

/// `(sum_{k=1}^c alpha^k)^{-1}`, the bound on [`constrained_delay`] that holds
/// for every `lambda < 1`.
pub fn uniform_delay_bound(alpha: f64, c: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for _ in 0..c {
        term *= alpha;
        sum += term;
    }
    1.0 / sum
}

/// Behaviour of [`constrained_delay`] as the memory `c` grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum PhaseTransition {
    /// `alpha < lambda`: the delay saturates at a positive limit.
    Saturating {
        /// Limit evaluated by summing the series numerically.
        limit: f64,
        /// `lambda (lambda - alpha) / ((1 - lambda)(lambda - alpha) + alpha)`.
        closed_form: f64,
        /// Same with `+1` in place of `+alpha` in the denominator.
        alternate_form: f64,
    },
    /// `alpha = lambda`: delay is `lambda / (1 - lambda + c)`, of order `1/c`.
    Harmonic { lambda: f64 },
    /// `alpha > lambda`: delay is at most `ratio^c` with `ratio = lambda/alpha`.
    Exponential { ratio: f64 },
}

impl PhaseTransition {
    /// Upper bound (or exact value, in the harmonic case) on the delay at memory `c`.
    pub fn bound(&self, c: usize) -> Option<f64> {
        match *self {
            PhaseTransition::Saturating { .. } => None,
            PhaseTransition::Harmonic { lambda } => Some(lambda / (1.0 - lambda + c as f64)),
            PhaseTransition::Exponential { ratio } => Some(ratio.powi(c as i32)),
        }
    }
}

/// Classifies `alpha` against `lambda` and describes the `c -> infinity`
/// behaviour of the constrained delay.
pub fn phase_transition_limit(lambda: f64, alpha: f64) -> PhaseTransition {
    if (alpha - lambda).abs() <= 1e-12 * lambda {
        return PhaseTransition::Harmonic { lambda };
    }
    if alpha > lambda {
        return PhaseTransition::Exponential { ratio: lambda / alpha };
    }
    let r = alpha / lambda;
    let mut term = 1.0;
    let mut sum = 0.0;
    loop {
        term *= r;
        sum += term;
        if term <= 1e-18 * sum.max(1e-300) {
            break;
        }
    }
    let gap = lambda - alpha;
    PhaseTransition::Saturating {
        limit: lambda / (1.0 - lambda + sum),
        closed_form: lambda * gap / ((1.0 - lambda) * gap + alpha),
        alternate_form: lambda * gap / ((1.0 - lambda) * gap + 1.0),
    }
}

/// Asymptotic power-of-d delay `sum_{i>=1} lambda^((d^i - d)/(d - 1)) - 1`,
/// summed until a term drops below 1e-12. `d = 1` is random routing.
pub fn power_of_d_delay(lambda: f64, d: usize) -> f64 {
    if d <= 1 {
        return lambda / (1.0 - lambda);
    }
    // the i = 1 term is exactly 1 and cancels the trailing -1
    let d = d as f64;
    let mut exponent = d;
    let mut sum = 0.0;
    loop {
        let term = lambda.powf(exponent);
        if term < 1e-12 {
            break;
        }
        sum += term;
        exponent = exponent * d + d;
    }
    sum
}
