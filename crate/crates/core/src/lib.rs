//! Network-wide coordinated flow sampling with stochastic flow rates.
//!
//! The crate decides, at every sampling epoch, which switch samples which
//! flow so that as many flows as possible are sampled at their target rate
//! while each switch's sampled-packet budget is exceeded only with a bounded
//! probability. It also ships an epoch-driven simulator that replays
//! synthetic or trace-driven traffic through the chosen schedule and measures
//! the sampling quality actually achieved.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod model;
pub mod optimizer;
pub mod scenario;
pub mod simulator;
pub mod stats;
pub mod topology;
pub mod trafficgen;

pub use error::{Error, Result};
pub use model::{build_network, load_stats, Allocation, FlowSpec, LoadStats, Network, SwitchSpec};
pub use optimizer::{
    brute_force_optimal, build_ilp_model, effective_load, min_required_capacity, socp_feasible,
    solve, solve_apx, solve_exact, Formulation, IlpModel, SolveReport, SolveResult, SolverConfig,
};
pub use scenario::{compare, sweep, Aggregate, Algorithm, Overrides, Scenario};
pub use simulator::{
    measure_metrics, run_simulation, EpochConfig, EstimatorConfig, EstimatorMode, Planner,
    SamplingQuery, SimReport, SimSummary,
};
pub use stats::{
    estimate_flow_stats, normal_quantile, violation_probability, Quartiles, RateHistory,
};
pub use trafficgen::{
    generate_model_driven, generate_rates, load_trace, parse_trace, RateDistribution, RateMix,
    RateModel, RateProcess,
};
