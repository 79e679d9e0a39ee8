use std::time::Instant;

use super::{cone_load, effective_loads, within_capacity, Formulation, SolveResult, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{Allocation, Network};

/// Largest `Π_f (|S_f| + 1)` that [`brute_force_optimal`] will enumerate.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

enum Check {
    Additive(Vec<f64>),
    Cone(f64),
}

struct Enumerator<'a> {
    net: &'a Network,
    check: Check,
    mean: Vec<f64>,
    var: Vec<f64>,
    current: Vec<Option<usize>>,
    count: usize,
    best: usize,
    best_assign: Vec<Option<usize>>,
    nodes: u64,
}

impl Enumerator<'_> {
    fn admissible(&self, s: usize, f: usize) -> bool {
        let cap = self.net.capacity(s);
        match &self.check {
            Check::Additive(w) => within_capacity(self.mean[s] + w[f], cap),
            Check::Cone(z) => {
                let l = self.net.load(f);
                within_capacity(
                    cone_load(self.mean[s] + l.mu, self.var[s] + l.variance(), *z),
                    cap,
                )
            }
        }
    }

    fn charge(&mut self, s: usize, f: usize, sign: f64) {
        match &self.check {
            Check::Additive(w) => self.mean[s] += sign * w[f],
            Check::Cone(_) => {
                let l = self.net.load(f);
                self.mean[s] += sign * l.mu;
                self.var[s] += sign * l.variance();
            }
        }
    }

    // Choices per flow, in order: unassigned, then the path switches.
    fn visit(&mut self, f: usize) {
        self.nodes += 1;
        if f == self.net.num_flows() {
            if self.count > self.best {
                self.best = self.count;
                self.best_assign.clone_from(&self.current);
            }
            return;
        }
        self.visit(f + 1);
        for i in 0..self.net.path(f).len() {
            let s = self.net.path(f)[i];
            // Loads are non-negative, so an infeasible prefix has no feasible completion.
            if !self.admissible(s, f) {
                continue;
            }
            self.charge(s, f, 1.0);
            self.current[f] = Some(s);
            self.count += 1;
            self.visit(f + 1);
            self.count -= 1;
            self.current[f] = None;
            self.charge(s, f, -1.0);
        }
    }
}

/// Exhaustive search over every assignment. Among maximum-cardinality
/// assignments the first in enumeration order is returned.
pub fn brute_force_optimal(network: &Network, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    let size: f64 = (0..network.num_flows())
        .map(|f| (network.path(f).len() + 1) as f64)
        .product();
    if size > ENUMERATION_BUDGET as f64 {
        return Err(Error::EnumerationBudget {
            size,
            budget: ENUMERATION_BUDGET,
        });
    }
    let started = Instant::now();
    let check = match config.formulation {
        Formulation::Exact => Check::Cone(config.z()?),
        _ => Check::Additive(effective_loads(network, config)?),
    };
    let n = network.num_flows();
    let mut e = Enumerator {
        net: network,
        check,
        mean: vec![0.0; network.num_switches()],
        var: vec![0.0; network.num_switches()],
        current: vec![None; n],
        count: 0,
        best: 0,
        best_assign: vec![None; n],
        nodes: 0,
    };
    e.visit(0);
    Ok(SolveResult {
        allocation: Allocation::from_indices_unchecked(e.best_assign),
        objective: e.best,
        optimal: true,
        nodes_explored: e.nodes,
        wall_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, FlowSpec, SwitchSpec};
    use crate::optimizer::fixtures::two_switch;

    /// Mixed-radix counter over all assignments, independent of the recursion.
    fn odometer_best(net: &Network, config: &SolverConfig) -> usize {
        let weights = effective_loads(net, config).unwrap();
        let n = net.num_flows();
        let mut digits = vec![0usize; n];
        let mut best = 0;
        loop {
            let mut load = vec![0.0; net.num_switches()];
            let mut count = 0;
            for f in 0..n {
                if digits[f] > 0 {
                    load[net.path(f)[digits[f] - 1]] += weights[f];
                    count += 1;
                }
            }
            if (0..net.num_switches()).all(|s| within_capacity(load[s], net.capacity(s))) {
                best = best.max(count);
            }
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                digits[i] += 1;
                if digits[i] <= net.path(i).len() {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn two_switch_matches_odometer() {
        let net = two_switch();
        let cfg = SolverConfig::new(Formulation::Apx, 0.08);
        let res = brute_force_optimal(&net, &cfg).unwrap();
        assert_eq!(res.objective, 2);
        assert_eq!(odometer_best(&net, &cfg), 2);
    }

    #[test]
    fn single_flow_fits() {
        let net = build_network(
            vec![SwitchSpec::new("S", 5.0)],
            vec![FlowSpec::on_path("f", &["S"], 0.5, 4.0, 1.0)],
        )
        .unwrap();
        let res = brute_force_optimal(&net, &SolverConfig::new(Formulation::Apx, 0.2)).unwrap();
        assert_eq!(res.objective, 1);
    }

    #[test]
    fn budget_enforced() {
        let switches: Vec<_> = (0..9)
            .map(|i| SwitchSpec::new(format!("S{i}"), 1.0))
            .collect();
        let ids: Vec<String> = (0..9).map(|i| format!("S{i}")).collect();
        let path: Vec<&str> = ids.iter().map(String::as_str).collect();
        let flows = (0..8)
            .map(|i| FlowSpec::on_path(format!("f{i}"), &path, 0.1, 1.0, 0.0))
            .collect();
        let net = build_network(switches, flows).unwrap();
        assert!(matches!(
            brute_force_optimal(&net, &SolverConfig::default()),
            Err(Error::EnumerationBudget { .. })
        ));
    }
}
