//! Exact solver for the normal-approximation (cone) capacity constraint, and
//! the linearized integer model it is equivalent to.
//!
//! Squaring `Σμx + z·sqrt(Σσ²x) ≤ B` is valid once `B − Σμx ≥ 0` is also
//! imposed. Expanding the square introduces products `x_f·x_f'` which the
//! linear model carries as auxiliary binaries `w_{f,f',s}` tied to `x` by
//! `w ≤ x_f`, `w ≤ x_f'` and `w ≥ x_f + x_f' − 1`. Those three rows fix `w`
//! once `x` is known, so searching over `x` with the cone check solves the
//! linear model too.

use std::time::Instant;

use super::apx::{effective_capacity, utilization};
use super::bnb::{branch_and_bound, CapacityModel, Limits};
use super::{cone_load, Formulation, SolveResult, SolverConfig};
use crate::error::{invalid, Result};
use crate::model::{Allocation, Network};

struct Cone {
    mu: Vec<f64>,
    var: Vec<f64>,
    z: f64,
    capacity: Vec<f64>,
    limit: Vec<f64>,
    sum_mu: Vec<f64>,
    sum_var: Vec<f64>,
    members: Vec<u32>,
}

impl Cone {
    fn new(network: &Network, z: f64) -> Self {
        let capacity: Vec<f64> = network.switches().iter().map(|s| s.capacity_pps).collect();
        let n = capacity.len();
        Self {
            mu: network.loads().iter().map(|l| l.mu).collect(),
            var: network.loads().iter().map(|l| l.variance()).collect(),
            z,
            limit: capacity.iter().copied().map(effective_capacity).collect(),
            capacity,
            sum_mu: vec![0.0; n],
            sum_var: vec![0.0; n],
            members: vec![0; n],
        }
    }

    fn used(&self, s: usize) -> f64 {
        cone_load(self.sum_mu[s], self.sum_var[s], self.z)
    }
}

impl CapacityModel for Cone {
    fn weight(&self, flow: usize) -> f64 {
        self.mu[flow]
    }

    fn tiebreak(&self, flow: usize) -> f64 {
        self.var[flow]
    }

    fn fits(&self, s: usize, f: usize) -> bool {
        cone_load(
            self.sum_mu[s] + self.mu[f],
            self.sum_var[s] + self.var[f],
            self.z,
        ) <= self.limit[s]
    }

    fn add(&mut self, s: usize, f: usize) {
        self.sum_mu[s] += self.mu[f];
        self.sum_var[s] += self.var[f];
        self.members[s] += 1;
    }

    fn remove(&mut self, s: usize, f: usize) {
        self.members[s] -= 1;
        if self.members[s] == 0 {
            self.sum_mu[s] = 0.0;
            self.sum_var[s] = 0.0;
        } else {
            self.sum_mu[s] -= self.mu[f];
            self.sum_var[s] = (self.sum_var[s] - self.var[f]).max(0.0);
        }
    }

    fn residual(&self, s: usize) -> f64 {
        self.limit[s] - self.used(s)
    }

    fn utilization(&self, s: usize) -> f64 {
        utilization(self.used(s), self.capacity[s])
    }

    fn ordered_dominance(&self) -> bool {
        false
    }

    fn dominates(&self, later: usize, earlier: usize) -> bool {
        self.mu[later] >= self.mu[earlier] && self.var[later] >= self.var[earlier]
    }
}

/// Maximizes admitted flows under the cone constraint on every switch.
pub fn solve_exact(network: &Network, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    if config.formulation != Formulation::Exact {
        return Err(invalid(
            "formulation",
            format!("solve_exact needs `exact`, got `{}`", config.formulation),
        ));
    }
    let started = Instant::now();
    let outcome = branch_and_bound(
        network,
        Cone::new(network, config.z()?),
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

/// Variable and row layout of the linearized model.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpModel {
    /// `(flow, switch)` for every `x_{f,s}` with `s` on the path of `f`.
    pub x_vars: Vec<(usize, usize)>,
    /// `(f, f', s)` with `f < f'`, both crossing `s`.
    pub w_vars: Vec<(usize, usize, usize)>,
    /// Start of each switch's block in `w_vars`.
    w_offsets: Vec<usize>,
    /// At most one switch per flow.
    pub admission_rows: usize,
    /// `B_s − Σμx ≥ 0`.
    pub nonnegativity_rows: usize,
    /// The three rows tying each `w` to its two `x`.
    pub product_rows: usize,
    /// Squared capacity rows.
    pub capacity_rows: usize,
}

/// Lays out the linearized model of `network` without solving it.
pub fn build_ilp_model(network: &Network) -> IlpModel {
    let mut x_vars = Vec::new();
    for f in 0..network.num_flows() {
        for &s in network.path(f) {
            x_vars.push((f, s));
        }
    }
    let mut w_vars = Vec::new();
    let mut w_offsets = Vec::with_capacity(network.num_switches() + 1);
    for s in 0..network.num_switches() {
        w_offsets.push(w_vars.len());
        let through = network.flows_through(s);
        for (i, &a) in through.iter().enumerate() {
            for &b in &through[i + 1..] {
                w_vars.push((a.min(b), a.max(b), s));
            }
        }
    }
    w_offsets.push(w_vars.len());
    IlpModel {
        admission_rows: network.num_flows(),
        nonnegativity_rows: network.num_switches(),
        product_rows: 3 * w_vars.len(),
        capacity_rows: network.num_switches(),
        x_vars,
        w_vars,
        w_offsets,
    }
}

impl IlpModel {
    /// The unique `w` consistent with `alloc`: `w = x_f · x_f'`.
    pub fn derive_w(&self, alloc: &Allocation) -> Vec<bool> {
        self.w_vars
            .iter()
            .map(|&(a, b, s)| alloc.switch_of(a) == Some(s) && alloc.switch_of(b) == Some(s))
            .collect()
    }

    /// Evaluates every row of the linearized model at `(alloc, w)`.
    pub fn satisfies(&self, network: &Network, alloc: &Allocation, w: &[bool], z: f64) -> bool {
        if alloc.validate(network).is_err() || w.len() != self.w_vars.len() {
            return false;
        }
        let x = |f: usize, s: usize| {
            if alloc.switch_of(f) == Some(s) {
                1.0
            } else {
                0.0
            }
        };

        for (&(a, b, s), &wv) in self.w_vars.iter().zip(w) {
            let wv = if wv { 1.0 } else { 0.0 };
            if wv > x(a, s) || wv > x(b, s) || wv < x(a, s) + x(b, s) - 1.0 {
                return false;
            }
        }

        for s in 0..network.num_switches() {
            let cap = effective_capacity(network.capacity(s));
            let (mut mean, mut var, mut mean_sq) = (0.0, 0.0, 0.0);
            for &f in network.flows_through(s) {
                let l = network.load(f);
                let xv = x(f, s);
                mean += l.mu * xv;
                var += l.variance() * xv;
                // x² = x for binaries.
                mean_sq += l.mu * l.mu * xv;
            }
            if cap - mean < 0.0 {
                return false;
            }
            let mut cross = 0.0;
            let span = self.w_offsets[s]..self.w_offsets[s + 1];
            for (&on, &(a, b, _)) in w[span.clone()].iter().zip(&self.w_vars[span]) {
                if on {
                    cross += network.load(a).mu * network.load(b).mu;
                }
            }
            let lhs = z * z * var;
            let rhs = cap * cap - 2.0 * cap * mean + mean_sq + 2.0 * cross;
            if lhs > rhs + 1e-12 * cap.abs().max(1.0).powi(2) {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, FlowSpec, SwitchSpec};
    use crate::optimizer::{fixtures::two_switch, socp_feasible, solve_apx};

    #[test]
    fn two_switch_deterministic_assignment_is_feasible_at_its_violation_level() {
        let net = two_switch();
        let res = solve_exact(&net, &SolverConfig::new(Formulation::Exact, 0.14)).unwrap();
        assert_eq!(res.objective, 4);
        assert!(res.optimal);
        assert!(socp_feasible(&net, &res.allocation, 0.14));

        let det = Allocation::from_indices(&net, vec![Some(0), Some(1), Some(0), Some(1)]).unwrap();
        assert!(socp_feasible(&net, &det, 0.14));
    }

    #[test]
    fn zero_flows() {
        let net = build_network(vec![SwitchSpec::new("S", 1.0)], vec![]).unwrap();
        let res = solve_exact(&net, &SolverConfig::new(Formulation::Exact, 0.2)).unwrap();
        assert_eq!((res.objective, res.optimal), (0, true));
    }

    #[test]
    fn exact_at_least_apx_on_two_switch() {
        let net = two_switch();
        for delta in [0.05, 0.08, 0.14, 0.3, 0.5] {
            let e = solve_exact(&net, &SolverConfig::new(Formulation::Exact, delta)).unwrap();
            let a = solve_apx(&net, &SolverConfig::new(Formulation::Apx, delta)).unwrap();
            assert!(e.objective >= a.objective, "delta={delta}");
        }
    }

    #[test]
    fn ilp_layout_counts() {
        let switches = vec![SwitchSpec::new("A", 1.0), SwitchSpec::new("B", 1.0)];
        let flows = vec![
            FlowSpec::on_path("f1", &["A", "B"], 0.1, 1.0, 1.0),
            FlowSpec::on_path("f2", &["A"], 0.1, 1.0, 1.0),
            FlowSpec::on_path("f3", &["A", "B"], 0.1, 1.0, 1.0),
        ];
        let net = build_network(switches, flows).unwrap();
        let m = build_ilp_model(&net);
        assert_eq!(m.x_vars.len(), 5);
        // A carries 3 flows (3 pairs), B carries 2 (1 pair).
        assert_eq!(m.w_vars.len(), 4);
        assert_eq!(m.product_rows, 12);
        assert!(m.w_vars.iter().all(|&(a, b, _)| a < b));
    }

    #[test]
    fn inconsistent_w_violates_product_rows() {
        let net = two_switch();
        let m = build_ilp_model(&net);
        let alloc = Allocation::from_indices(&net, vec![Some(0), Some(0), None, None]).unwrap();
        let z = SolverConfig::new(Formulation::Exact, 0.3).z().unwrap();
        let w = m.derive_w(&alloc);
        assert!(m.satisfies(&net, &alloc, &w, z));
        let mut bad = w.clone();
        let i = bad.iter().position(|&v| v).unwrap();
        bad[i] = false;
        assert!(!m.satisfies(&net, &alloc, &bad, z));
    }
}
