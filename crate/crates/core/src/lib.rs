//! Whittle index scheduling for age-of-information minimisation over
//! unreliable channels.
//!
//! - [`policy`]: closed-form index, threshold-chain stationary law and costs.
//! - [`relaxed`]: mixed-threshold optimum of the time-averaged problem.
//! - [`fluid`]: fluid-limit recursion and its two-class convergence diagnostics.
//! - [`sim`]: seeded N-user simulator and the concentration experiment.
//! - [`harness`]: experiment specs, recipes and CSV output used by the CLI.

pub mod error;
pub mod fluid;
pub mod harness;
pub mod policy;
pub mod relaxed;
pub mod sim;

pub use error::{Error, Result};
pub use fluid::{fluid_step, run_fluid, FluidState, ScheduleDecision};
pub use policy::{
    active_fraction, dtmc_stationary_oracle, stationary_distribution, threshold_average_cost,
    whittle_index, ClassSpec, SystemConfig, ThresholdDistribution,
};
pub use relaxed::{fixed_point, relaxed_cost, solve_relaxed, RelaxedSolution};
pub use sim::{simulate, whittle_schedule, Policy, SimConfig, SimMetrics, SimRun};
