use std::time::Instant;

use super::bnb::{branch_and_bound, CapacityModel, Limits};
use super::{effective_loads, Formulation, SolveResult, SolverConfig, FEASIBILITY_TOLERANCE};
use crate::error::{invalid, Result};
use crate::model::{Allocation, Network};

pub(super) fn effective_capacity(cap: f64) -> f64 {
    cap + FEASIBILITY_TOLERANCE * cap.abs().max(1.0)
}

/// Per-switch additive load of fixed flow weights.
struct Additive {
    weights: Vec<f64>,
    capacity: Vec<f64>,
    limit: Vec<f64>,
    load: Vec<f64>,
    members: Vec<u32>,
}

impl Additive {
    fn new(network: &Network, weights: Vec<f64>) -> Self {
        let capacity: Vec<f64> = network.switches().iter().map(|s| s.capacity_pps).collect();
        Self {
            limit: capacity.iter().copied().map(effective_capacity).collect(),
            load: vec![0.0; capacity.len()],
            members: vec![0; capacity.len()],
            capacity,
            weights,
        }
    }
}

impl CapacityModel for Additive {
    fn weight(&self, flow: usize) -> f64 {
        self.weights[flow]
    }

    fn fits(&self, switch: usize, flow: usize) -> bool {
        self.load[switch] + self.weights[flow] <= self.limit[switch]
    }

    fn add(&mut self, switch: usize, flow: usize) {
        self.load[switch] += self.weights[flow];
        self.members[switch] += 1;
    }

    fn remove(&mut self, switch: usize, flow: usize) {
        self.members[switch] -= 1;
        if self.members[switch] == 0 {
            self.load[switch] = 0.0;
        } else {
            self.load[switch] -= self.weights[flow];
        }
    }

    fn residual(&self, switch: usize) -> f64 {
        self.limit[switch] - self.load[switch]
    }

    fn utilization(&self, switch: usize) -> f64 {
        utilization(self.load[switch], self.capacity[switch])
    }

    fn ordered_dominance(&self) -> bool {
        true
    }

    fn dominates(&self, later: usize, earlier: usize) -> bool {
        self.weights[later] >= self.weights[earlier]
    }
}

pub(super) fn utilization(load: f64, capacity: f64) -> f64 {
    if capacity > 0.0 {
        load / capacity
    } else if load > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Maximizes admitted flows under additive per-switch capacity, charging each
/// flow its [`effective_load`](super::effective_load). Serves APX, DS, DS+2σ
/// and cS+ε.
pub fn solve_apx(network: &Network, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    if config.formulation == Formulation::Exact {
        return Err(invalid(
            "formulation",
            "the cone constraint is not additive, use solve_exact",
        ));
    }
    let started = Instant::now();
    let weights = effective_loads(network, config)?;
    let outcome = branch_and_bound(
        network,
        Additive::new(network, weights),
        &Limits {
            node_limit: config.node_limit,
            time_limit: config.time_limit,
        },
    );
    Ok(SolveResult {
        allocation: Allocation::from_indices_unchecked(outcome.assignment),
        objective: outcome.objective,
        optimal: outcome.optimal,
        nodes_explored: outcome.nodes,
        wall_time: started.elapsed(),
    })
}
