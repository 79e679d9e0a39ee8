//! Sampling-allocation solvers.
//!
//! Every formulation maximizes the number of admitted flows subject to each
//! flow being sampled on at most one switch of its path. They differ in how a
//! switch's capacity constraint charges the flows assigned to it:
//!
//! * APX, DS, DS+2σ and cS+ε charge an additive per-flow weight (see
//!   [`effective_load`]) and are solved by [`solve_apx`].
//! * EXACT enforces `Σμ + z_δ·sqrt(Σσ²) ≤ B` per switch and is solved by
//!   [`solve_exact`].

mod apx;
mod bnb;
mod brute;
mod exact;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Allocation, FlowSpec, LoadStats, Network};
use crate::stats::normal_quantile;

pub use apx::solve_apx;
pub use brute::{brute_force_optimal, ENUMERATION_BUDGET};
pub use exact::{build_ilp_model, solve_exact, IlpModel};

/// Relative slack accepted on every capacity comparison.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;

/// `load ≤ capacity` up to [`FEASIBILITY_TOLERANCE`].
pub fn within_capacity(load: f64, capacity: f64) -> bool {
    load <= capacity + FEASIBILITY_TOLERANCE * capacity.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Linear surrogate `μ + z_δ·σ` per flow.
    Apx,
    /// Normal-approximation cone constraint.
    Exact,
    /// Mean load only.
    Ds,
    /// Mean plus two standard deviations.
    Ds2Sigma,
    /// Rate inflated by a fixed fluctuation bound ε.
    Csamp,
}

impl Formulation {
    pub const ALL: [Formulation; 5] = [
        Formulation::Apx,
        Formulation::Exact,
        Formulation::Ds,
        Formulation::Ds2Sigma,
        Formulation::Csamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Apx => "apx",
            Formulation::Exact => "exact",
            Formulation::Ds => "ds",
            Formulation::Ds2Sigma => "ds2sigma",
            Formulation::Csamp => "csamp",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Formulation::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                invalid(
                    "formulation",
                    format!("unknown algorithm `{s}` (expected apx, exact, ds, ds2sigma or csamp)"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Accepted capacity-violation probability, in (0, 0.5].
    pub delta: f64,
    pub formulation: Formulation,
    /// cS+ε fluctuation bound, in raw-rate pps.
    pub epsilon_pps: f64,
    pub time_limit: Duration,
    pub node_limit: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            formulation: Formulation::Apx,
            epsilon_pps: 0.0,
            time_limit: Duration::from_secs(600),
            node_limit: 2_000_000,
        }
    }
}

impl SolverConfig {
    pub fn new(formulation: Formulation, delta: f64) -> Self {
        Self {
            formulation,
            delta,
            ..Self::default()
        }
    }

    pub fn with_epsilon(mut self, epsilon_pps: f64) -> Self {
        self.epsilon_pps = epsilon_pps;
        self
    }

    pub fn with_node_limit(mut self, node_limit: u64) -> Self {
        self.node_limit = node_limit;
        self
    }

    pub fn with_time_limit(mut self, time_limit: Duration) -> Self {
        self.time_limit = time_limit;
        self
    }

    /// δ above 0.5 makes `z_δ` negative and the cone constraint non-convex.
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(invalid(
                "delta",
                format!("{} is outside (0, 0.5]", self.delta),
            ));
        }
        if !(self.epsilon_pps >= 0.0 && self.epsilon_pps.is_finite()) {
            return Err(invalid(
                "epsilon",
                format!("{} must be finite and non-negative", self.epsilon_pps),
            ));
        }
        if self.node_limit == 0 {
            return Err(invalid("node_limit", "must be positive"));
        }
        Ok(())
    }

    pub fn z(&self) -> Result<f64> {
        normal_quantile(self.delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub allocation: Allocation,
    /// Number of admitted flows.
    pub objective: usize,
    /// Whether the search finished within its limits.
    pub optimal: bool,
    pub nodes_explored: u64,
    pub wall_time: Duration,
}

fn weight(load: LoadStats, flow: &FlowSpec, config: &SolverConfig, z: f64) -> f64 {
    match config.formulation {
        Formulation::Apx => load.mu + z * load.sigma,
        Formulation::Ds | Formulation::Exact => load.mu,
        Formulation::Ds2Sigma => load.mu + 2.0 * load.sigma,
        Formulation::Csamp => flow.target_rate * (flow.rate_mean_pps + config.epsilon_pps),
    }
}

/// Capacity a flow consumes under the configured formulation. For EXACT this
/// is the mean load, the least a flow can add to a cone constraint.
pub fn effective_load(flow: &FlowSpec, config: &SolverConfig) -> Result<f64> {
    let z = if config.formulation == Formulation::Apx {
        config.z()?
    } else {
        0.0
    };
    Ok(weight(crate::model::load_stats(flow), flow, config, z))
}

/// [`effective_load`] for every flow of `network`.
pub fn effective_loads(network: &Network, config: &SolverConfig) -> Result<Vec<f64>> {
    let z = if config.formulation == Formulation::Apx {
        config.z()?
    } else {
        0.0
    };
    Ok(network
        .flows()
        .iter()
        .zip(network.loads())
        .map(|(flow, &load)| weight(load, flow, config, z))
        .collect())
}

/// Per-switch additive feasibility of `alloc` for the given per-flow weights.
pub fn additive_feasible(network: &Network, alloc: &Allocation, weights: &[f64]) -> bool {
    let mut load = vec![0.0; network.num_switches()];
    for (f, s) in alloc.as_slice().iter().enumerate() {
        if let Some(s) = *s {
            load[s] += weights[f];
        }
    }
    load.iter()
        .enumerate()
        .all(|(s, &l)| within_capacity(l, network.capacity(s)))
}

pub(crate) fn cone_load(mean: f64, var: f64, z: f64) -> f64 {
    mean + z * var.sqrt()
}

/// Checks `Σμ·x + z_δ·sqrt(Σσ²·x) ≤ B` on every switch.
pub fn socp_feasible(network: &Network, alloc: &Allocation, delta: f64) -> bool {
    let Ok(z) = normal_quantile(delta) else {
        return false;
    };
    socp_feasible_z(network, alloc, z)
}

pub(crate) fn socp_feasible_z(network: &Network, alloc: &Allocation, z: f64) -> bool {
    let n = network.num_switches();
    let (mut mean, mut var) = (vec![0.0; n], vec![0.0; n]);
    for (f, s) in alloc.as_slice().iter().enumerate() {
        if let Some(s) = *s {
            let l = network.load(f);
            mean[s] += l.mu;
            var[s] += l.variance();
        }
    }
    (0..n).all(|s| within_capacity(cone_load(mean[s], var[s], z), network.capacity(s)))
}

/// Smallest capacity that lets one switch sample all of `flows` under the
/// cone constraint: `Σμ + z_δ·sqrt(Σσ²)`.
pub fn min_required_capacity(flows: &[LoadStats], delta: f64) -> Result<f64> {
    if flows.is_empty() {
        return Err(Error::Empty("flow list"));
    }
    let z = normal_quantile(delta)?;
    let mean: f64 = flows.iter().map(|l| l.mu).sum();
    let var: f64 = flows.iter().map(|l| l.variance()).sum();
    Ok(cone_load(mean, var, z))
}

/// Runs the solver matching `config.formulation`.
pub fn solve(network: &Network, config: &SolverConfig) -> Result<SolveResult> {
    match config.formulation {
        Formulation::Exact => solve_exact(network, config),
        _ => solve_apx(network, config),
    }
}

/// Serialized form of a [`SolveResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReport {
    pub schema: String,
    pub formulation: Formulation,
    pub delta: f64,
    pub objective: usize,
    pub optimal: bool,
    pub nodes_explored: u64,
    pub wall_time_s: f64,
    /// Every flow id, mapped to its switch or `null`.
    pub assignment: BTreeMap<String, Option<String>>,
}

pub const SOLVE_REPORT_SCHEMA: &str = "flowsamp.solve-report/v1";

impl SolveReport {
    pub fn new(network: &Network, config: &SolverConfig, result: &SolveResult) -> Self {
        let assignment = network
            .flows()
            .iter()
            .enumerate()
            .map(|(f, flow)| {
                (
                    flow.id.clone(),
                    result
                        .allocation
                        .switch_of(f)
                        .map(|s| network.switches()[s].id.clone()),
                )
            })
            .collect();
        Self {
            schema: SOLVE_REPORT_SCHEMA.to_string(),
            formulation: config.formulation,
            delta: config.delta,
            objective: result.objective,
            optimal: result.optimal,
            nodes_explored: result.nodes_explored,
            wall_time_s: result.wall_time.as_secs_f64(),
            assignment,
        }
    }

    /// Rebuilds and re-validates the result against `network`.
    pub fn to_result(&self, network: &Network) -> Result<SolveResult> {
        if self.schema != SOLVE_REPORT_SCHEMA {
            return Err(invalid("schema", format!("unsupported `{}`", self.schema)));
        }
        let mut map = BTreeMap::new();
        for (flow, switch) in &self.assignment {
            if network.flow_idx(flow).is_none() {
                return Err(Error::UnknownFlow(flow.clone()));
            }
            if let Some(s) = switch {
                map.insert(flow.clone(), s.clone());
            }
        }
        let allocation = Allocation::from_ids(network, &map)?;
        if allocation.assigned_count() != self.objective {
            return Err(invalid(
                "objective",
                format!(
                    "{} does not match {} assigned flows",
                    self.objective,
                    allocation.assigned_count()
                ),
            ));
        }
        Ok(SolveResult {
            allocation,
            objective: self.objective,
            optimal: self.optimal,
            nodes_explored: self.nodes_explored,
            wall_time: Duration::from_secs_f64(self.wall_time_s.max(0.0)),
        })
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::model::{build_network, FlowSpec, Network, SwitchSpec};

    pub fn two_switch() -> Network {
        let switches = vec![SwitchSpec::new("S1", 3.0), SwitchSpec::new("S2", 3.0)];
        let flows = vec![
            FlowSpec::on_path("f1", &["S1", "S2"], 0.1, 5.0, 100.0),
            FlowSpec::on_path("f2", &["S1", "S2"], 0.1, 5.0, 100.0),
            FlowSpec::on_path("f3", &["S1", "S2"], 0.1, 14.0, 1.0),
            FlowSpec::on_path("f4", &["S1", "S2"], 0.1, 14.0, 1.0),
        ];
        build_network(switches, flows).unwrap()
    }
}
