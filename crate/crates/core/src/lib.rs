//! Resource-constrained pull-based load balancing: exact n-server
//! simulation, the fluid limit, and the experiment harness tying them
//! together.

pub mod experiments;
pub mod fluid;
pub mod io;
pub mod model;
pub mod sim;

pub use experiments::{ComparisonRecord, ExperimentError, Scenario, SweepAxes};
pub use fluid::{equilibrium, integrate, Equilibrium, FluidError, FluidParams, FluidSolution};
pub use model::{ModelError, OccupancyVector, Regime, Schedule, SystemParams};
pub use sim::{run_steady_state, run_trajectory, RunConfig, SimError, SteadyStateRun, TrajectoryRun};
