//! Exact simulation of the n-server system under each dispatching policy.

pub mod engine;
pub mod output;
pub mod run;
pub mod state;
pub mod stats;

pub use engine::{dispatch_power_of_d, dispatch_pull, step, Event, EventClock, Rates, Step};
pub use run::{
    measure_message_rate, run_steady_state, run_trajectory, EventCounts, RunConfig, SimError,
    SteadyStateRun, TrajectoryRun,
};
pub use state::{IndexSet, SimState};
pub use stats::{OccupancySampler, TokenHistogram, WaitingTimeStats};
