//! Switches, flows, sampling loads and allocations.
//!
//! A [`Network`] is immutable once built. It keeps both directions of the
//! flow/switch incidence: the path of every flow and, for every switch, the
//! flows crossing it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A switch and its sampled-packet budget towards the collector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub id: String,
    /// Sampled packets per second the switch can forward.
    pub capacity_pps: f64,
}

impl SwitchSpec {
    pub fn new(id: impl Into<String>, capacity_pps: f64) -> Self {
        Self {
            id: id.into(),
            capacity_pps,
        }
    }
}

/// A flow to be sampled: its route, target sampling rate and rate moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub id: String,
    pub src: String,
    pub dst: String,
    /// Switches traversed, in order.
    pub path: Vec<String>,
    /// Fraction of the flow's packets that must be sampled.
    pub target_rate: f64,
    pub rate_mean_pps: f64,
    pub rate_var_pps2: f64,
}

impl FlowSpec {
    /// Flow whose endpoints are the first and last switch of `path`.
    pub fn on_path(
        id: impl Into<String>,
        path: &[&str],
        target_rate: f64,
        rate_mean_pps: f64,
        rate_var_pps2: f64,
    ) -> Self {
        Self {
            id: id.into(),
            src: path.first().map(|s| s.to_string()).unwrap_or_default(),
            dst: path.last().map(|s| s.to_string()).unwrap_or_default(),
            path: path.iter().map(|s| s.to_string()).collect(),
            target_rate,
            rate_mean_pps,
            rate_var_pps2,
        }
    }

    fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("flows[{}].{}", self.id, name);
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return Err(invalid(
                field("target_rate"),
                format!("{} is outside (0, 1]", self.target_rate),
            ));
        }
        if !(self.rate_mean_pps >= 0.0 && self.rate_mean_pps.is_finite()) {
            return Err(invalid(
                field("rate_mean_pps"),
                format!("{} must be a finite non-negative rate", self.rate_mean_pps),
            ));
        }
        if !(self.rate_var_pps2 >= 0.0 && self.rate_var_pps2.is_finite()) {
            return Err(invalid(
                field("rate_var_pps2"),
                format!(
                    "{} must be a finite non-negative variance",
                    self.rate_var_pps2
                ),
            ));
        }
        if self.path.is_empty() {
            return Err(Error::EmptyPath(self.id.clone()));
        }
        Ok(())
    }
}

/// Moments of a flow's sampling load (target rate times packet rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    pub mu: f64,
    pub sigma: f64,
}

impl LoadStats {
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Sampling-load moments of `flow`: scaling the rate by α scales the mean and
/// the standard deviation by α.
pub fn load_stats(flow: &FlowSpec) -> LoadStats {
    LoadStats {
        mu: flow.target_rate * flow.rate_mean_pps,
        sigma: flow.target_rate * flow.rate_var_pps2.sqrt(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    switches: Vec<SwitchSpec>,
    #[serde(default)]
    flows: Vec<FlowSpec>,
}

/// Switches and flows with the derived incidence sets.
#[derive(Debug, Clone)]
pub struct Network {
    switches: Vec<SwitchSpec>,
    flows: Vec<FlowSpec>,
    paths: Vec<Vec<usize>>,
    incidence: Vec<Vec<usize>>,
    loads: Vec<LoadStats>,
    switch_index: HashMap<String, usize>,
    flow_index: HashMap<String, usize>,
}

/// Validates the inputs and computes the flow/switch incidence.
pub fn build_network(switches: Vec<SwitchSpec>, flows: Vec<FlowSpec>) -> Result<Network> {
    let mut switch_index = HashMap::with_capacity(switches.len());
    for (i, sw) in switches.iter().enumerate() {
        if !(sw.capacity_pps >= 0.0) {
            return Err(invalid(
                format!("switches[{}].capacity_pps", sw.id),
                format!("{} must be non-negative", sw.capacity_pps),
            ));
        }
        if switch_index.insert(sw.id.clone(), i).is_some() {
            return Err(Error::DuplicateSwitch(sw.id.clone()));
        }
    }

    let mut flow_index = HashMap::with_capacity(flows.len());
    let mut paths = Vec::with_capacity(flows.len());
    let mut incidence = vec![Vec::new(); switches.len()];
    for (f, flow) in flows.iter().enumerate() {
        flow.validate()?;
        if flow_index.insert(flow.id.clone(), f).is_some() {
            return Err(Error::DuplicateFlow(flow.id.clone()));
        }
        let mut seen = HashSet::with_capacity(flow.path.len());
        let mut path = Vec::with_capacity(flow.path.len());
        for hop in &flow.path {
            let s = *switch_index.get(hop).ok_or_else(|| Error::UnknownSwitch {
                flow: flow.id.clone(),
                switch: hop.clone(),
            })?;
            if !seen.insert(s) {
                return Err(Error::RepeatedSwitch {
                    flow: flow.id.clone(),
                    switch: hop.clone(),
                });
            }
            incidence[s].push(f);
            path.push(s);
        }
        paths.push(path);
    }

    let loads = flows.iter().map(load_stats).collect();
    Ok(Network {
        switches,
        flows,
        paths,
        incidence,
        loads,
        switch_index,
        flow_index,
    })
}

impl Network {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        build_network(file.switches, file.flows)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = NetworkFile {
            switches: self.switches.clone(),
            flows: self.flows.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn switches(&self) -> &[SwitchSpec] {
        &self.switches
    }

    pub fn flows(&self) -> &[FlowSpec] {
        &self.flows
    }

    pub fn num_switches(&self) -> usize {
        self.switches.len()
    }

    pub fn num_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn capacity(&self, switch: usize) -> f64 {
        self.switches[switch].capacity_pps
    }

    /// Switch indices on the path of `flow` (S_f).
    pub fn path(&self, flow: usize) -> &[usize] {
        &self.paths[flow]
    }

    /// Flow indices crossing `switch` (F_s).
    pub fn flows_through(&self, switch: usize) -> &[usize] {
        &self.incidence[switch]
    }

    pub fn load(&self, flow: usize) -> LoadStats {
        self.loads[flow]
    }

    pub fn loads(&self) -> &[LoadStats] {
        &self.loads
    }

    pub fn switch_idx(&self, id: &str) -> Option<usize> {
        self.switch_index.get(id).copied()
    }

    pub fn flow_idx(&self, id: &str) -> Option<usize> {
        self.flow_index.get(id).copied()
    }

    pub fn on_path(&self, flow: usize, switch: usize) -> bool {
        self.paths[flow].contains(&switch)
    }
}

/// Each flow is sampled on at most one switch of its path, or not at all.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Allocation {
    assignment: Vec<Option<usize>>,
}

impl Allocation {
    pub fn empty(num_flows: usize) -> Self {
        Self {
            assignment: vec![None; num_flows],
        }
    }

    /// Wraps a raw index assignment, checking it against `network`.
    pub fn from_indices(network: &Network, assignment: Vec<Option<usize>>) -> Result<Self> {
        let alloc = Self { assignment };
        alloc.validate(network)?;
        Ok(alloc)
    }

    pub(crate) fn from_indices_unchecked(assignment: Vec<Option<usize>>) -> Self {
        Self { assignment }
    }

    /// Builds an allocation from a `flow id -> switch id` map.
    pub fn from_ids(network: &Network, map: &BTreeMap<String, String>) -> Result<Self> {
        let mut alloc = Self::empty(network.num_flows());
        for (flow, switch) in map {
            let f = network
                .flow_idx(flow)
                .ok_or_else(|| Error::UnknownFlow(flow.clone()))?;
            let s = network
                .switch_idx(switch)
                .ok_or_else(|| Error::UnknownSwitchId(switch.clone()))?;
            alloc.assign(network, f, Some(s))?;
        }
        Ok(alloc)
    }

    pub fn assign(&mut self, network: &Network, flow: usize, switch: Option<usize>) -> Result<()> {
        if let Some(s) = switch {
            if !network.on_path(flow, s) {
                return Err(Error::OffPathAssignment {
                    flow: network.flows()[flow].id.clone(),
                    switch: network
                        .switches()
                        .get(s)
                        .map(|sw| sw.id.clone())
                        .unwrap_or_else(|| format!("#{s}")),
                });
            }
        }
        self.assignment[flow] = switch;
        Ok(())
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        if self.assignment.len() != network.num_flows() {
            return Err(Error::AllocationSize {
                expected: network.num_flows(),
                found: self.assignment.len(),
            });
        }
        for (f, s) in self.assignment.iter().enumerate() {
            if let Some(s) = *s {
                if !network.on_path(f, s) {
                    return Err(Error::OffPathAssignment {
                        flow: network.flows()[f].id.clone(),
                        switch: network
                            .switches()
                            .get(s)
                            .map(|sw| sw.id.clone())
                            .unwrap_or_else(|| format!("#{s}")),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn switch_of(&self, flow: usize) -> Option<usize> {
        self.assignment.get(flow).copied().flatten()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assigned_count(&self) -> usize {
        self.assignment.iter().filter(|s| s.is_some()).count()
    }

    /// Flows assigned to `switch`, in flow order.
    pub fn flows_on(&self, switch: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == Some(switch))
            .map(|(f, _)| f)
    }

    pub fn to_id_map(&self, network: &Network) -> BTreeMap<String, String> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(f, s)| {
                s.map(|s| {
                    (
                        network.flows()[f].id.clone(),
                        network.switches()[s].id.clone(),
                    )
                })
            })
            .collect()
    }
}
