//! Simulator for production networks with random, load-dependent machine
//! failures.
//!
//! Goods move through each processor according to a scalar conservation law
//! with flux `min(v * rho, mu)`, buffered by a queue ODE at the inlet, and
//! coupled across a directed graph by distribution rates. Processor
//! capacities jump between discrete regimes at random times whose rates may
//! depend on the current load; sample paths of the resulting piecewise
//! deterministic process are exact in distribution (thinning against a
//! dominating Poisson process), with the deterministic dynamics discretized
//! by a left-sided upwind scheme and forward Euler between jumps.
//!
//! Module map:
//!
//! - [`model`]: network description, signals, scenario validation
//! - [`schema`]: the JSON scenario file format
//! - [`solver`]: deterministic evolution at frozen capacities
//! - [`rates`]: load indicators, transition rate laws, dominating bounds
//! - [`pdmp`]: thinning sampler and single-path simulation
//! - [`measures`]: per-path performance measures, mergeable ensemble stats
//! - [`montecarlo`]: reproducible parallel ensembles

pub mod measures;
pub mod model;
pub mod montecarlo;
pub mod pdmp;
pub mod rates;
pub mod schema;
pub mod solver;

#[cfg(test)]
pub(crate) mod testkit;

pub use measures::{discrete_tv, g_net_out, histogram, q_net, EnsembleStats, PathRecord};
pub use model::{validate_scenario, Scenario, ValidationReport};
pub use montecarlo::{run_ensemble, EnsembleConfig, EnsembleRun};
pub use pdmp::{
    next_jump, output_times, sample_post_jump, simulate_path, HybridState, JumpEvent, NextJump,
    PathError, RngStream,
};
pub use rates::{psi, rate, rwip, uniform_bound, ur, RateBounds, RateModelSpec};
pub use schema::{scenario_from_str, SchemaError};
pub use solver::{
    compute_g_in, compute_g_out, evolve, flux, l1_distance, upwind_edge_step, FluxLedger, Grid,
    NetworkState,
};
