//! Deterministic fluid model: drift, integration across the High Message
//! boundary, equilibria and closed-form delays.

pub mod drift;
pub mod equilibrium;
pub mod integrate;

use thiserror::Error;

use crate::model::ModelError;

pub use drift::{fluid_drift, p0, FluidParams};
pub use equilibrium::{
    constrained_delay, delay_from_equilibrium, equilibrium, equilibrium_p0, phase_transition_limit,
    power_of_d_delay, power_of_d_equilibrium, uniform_delay_bound, Equilibrium, PhaseTransition,
};
pub use integrate::{integrate, read_fluid_csv, Annotation, FluidSolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluidError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("tail mass s_{level}={value:e} at t={time} exceeds tolerance; increase the truncation level K")]
    TailOverflow { level: usize, value: f64, time: f64 },
    #[error("step size underflow at t={time}")]
    StepUnderflow { time: f64 },
    #[error("horizon must be finite and nonnegative, got {0}")]
    InvalidHorizon(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
}
