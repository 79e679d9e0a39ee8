//! Declarative experiment configurations.
//!
//! A [`Scenario`] is a TOML document describing the network, the traffic,
//! the queries, the epoch loop and the solver. Every field is optional:
//! unset fields are filled from [`Overrides`] (command-line flags) and then
//! from defaults. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{build_network, Allocation, FlowSpec, Network, SwitchSpec};
use crate::optimizer::{Formulation, SolverConfig};
use crate::simulator::{
    measure_metrics, run_simulation, EpochConfig, EstimatorConfig, EstimatorMode, Planner,
    SamplingQuery, SimReport, SimSummary,
};
use crate::stats::Quartiles;
use crate::topology::Topology;
use crate::trafficgen::{
    generate_rates, load_trace, RateDistribution, RateMix, RateModel, RateProcess,
};

const PRESETS: [(&str, &str); 5] = [
    ("micro", include_str!("../presets/micro.toml")),
    ("model-driven", include_str!("../presets/model-driven.toml")),
    ("trace-driven", include_str!("../presets/trace-driven.toml")),
    ("epoch-sweep", include_str!("../presets/epoch-sweep.toml")),
    (
        "distribution-sensitivity",
        include_str!("../presets/distribution-sensitivity.toml"),
    ),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    /// The Abilene backbone with shortest-path routed node pairs.
    Abilene,
    /// A random preferential-attachment graph.
    ScaleFree,
    /// One switch crossed by every flow.
    SingleSwitch,
    /// A network JSON file.
    File,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub kind: Option<NetworkKind>,
    pub path: Option<PathBuf>,
    /// Overrides every switch capacity when set.
    pub capacity_pps: Option<f64>,
    pub nodes: Option<usize>,
    pub attach: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    /// Each flow exists for the whole run.
    Persistent,
    /// Each flow is re-instantiated every epoch as an independent flow,
    /// with its own rate model, alive for that epoch only.
    PerEpoch,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowsSection {
    pub mode: Option<FlowMode>,
    /// Number of node pairs to draw; all pairs when unset (Abilene only).
    pub count: Option<usize>,
    pub target_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrafficSource {
    /// Per-flow models drawn from the configured mixture.
    Mix,
    /// Models built from each flow's declared rate mean and variance.
    Declared,
    /// Replay of a trace file.
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMatch {
    /// Trace flow ids are network flow ids.
    Id,
    /// The i-th trace flow feeds the i-th network flow.
    Order,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub source: Option<TrafficSource>,
    pub distribution: Option<RateDistribution>,
    pub mean_kbps: Option<Vec<f64>>,
    pub low_cov: Option<f64>,
    pub high_cov: Option<f64>,
    pub low_cov_probability: Option<f64>,
    pub packet_size_bytes: Option<f64>,
    pub trace: Option<PathBuf>,
    pub scale_divisor: Option<f64>,
    pub trace_match: Option<TraceMatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// Every flow is queried over its whole lifetime.
    All,
    /// Every flow is queried in each epoch independently with `probability`.
    PerEpoch,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueriesSection {
    pub mode: Option<QueryMode>,
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSection {
    pub length_s: Option<f64>,
    pub bucket_s: Option<f64>,
    pub epochs: Option<usize>,
    pub fully_sampled_tolerance: Option<f64>,
    pub estimator: Option<EstimatorMode>,
    pub window_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    Solve,
    /// Every flow on the first switch of its path, every epoch.
    AssignAll,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub planner: Option<PlannerKind>,
    pub formulation: Option<Formulation>,
    pub delta: Option<f64>,
    pub epsilon_pps: Option<f64>,
    pub time_limit_s: Option<f64>,
    pub node_limit: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Option<Vec<u64>>,
    pub algorithms: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epoch_lengths_s: Option<Vec<f64>>,
    pub distributions: Option<Vec<RateDistribution>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: Option<String>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub flows: FlowsSection,
    #[serde(default)]
    pub traffic: TrafficSection,
    #[serde(default)]
    pub queries: QueriesSection,
    #[serde(default)]
    pub epoch: EpochSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
    pub sweep: Option<SweepSection>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Values supplied outside the configuration document. They only fill
/// fields the document leaves unset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub net: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub formulation: Option<Formulation>,
    pub delta: Option<f64>,
    pub epsilon_pps: Option<f64>,
    pub alpha: Option<f64>,
    pub epoch_length_s: Option<f64>,
    pub bucket_s: Option<f64>,
    pub seed: Option<u64>,
    pub time_limit_s: Option<f64>,
}

fn fill<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
    if slot.is_none() {
        slot.clone_from(value);
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut s = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let src = preset_source(name).ok_or_else(|| {
            let known: Vec<_> = preset_names().collect();
            Error::Config(format!(
                "unknown preset `{name}` (known: {})",
                known.join(", ")
            ))
        })?;
        Self::from_toml_str(src)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if self.network.kind.is_none() && self.network.path.is_none() && o.net.is_some() {
            self.network.kind = Some(NetworkKind::File);
        }
        fill(&mut self.network.path, &o.net);
        if self.traffic.source.is_none() && self.traffic.trace.is_none() && o.trace.is_some() {
            self.traffic.source = Some(TrafficSource::Trace);
        }
        fill(&mut self.traffic.trace, &o.trace);
        fill(&mut self.solver.formulation, &o.formulation);
        fill(&mut self.solver.delta, &o.delta);
        fill(&mut self.solver.epsilon_pps, &o.epsilon_pps);
        fill(&mut self.solver.time_limit_s, &o.time_limit_s);
        fill(&mut self.flows.target_rate, &o.alpha);
        fill(&mut self.epoch.length_s, &o.epoch_length_s);
        fill(&mut self.epoch.bucket_s, &o.bucket_s);
        if self.run.seeds.is_none() {
            self.run.seeds = o.seed.map(|s| vec![s]);
        }
    }

    fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.run.seeds.clone().unwrap_or_else(|| vec![1])
    }

    /// Algorithms listed in the document, or APX alone.
    pub fn algorithms(&self) -> Result<Vec<Algorithm>> {
        match &self.run.algorithms {
            Some(list) => list.iter().map(|a| a.parse()).collect(),
            None => Ok(vec![Algorithm::new(
                self.solver.formulation.unwrap_or(Formulation::Apx),
            )]),
        }
    }

    pub fn num_epochs(&self) -> usize {
        self.epoch.epochs.unwrap_or(5)
    }

    pub fn solver_config(&self, algorithm: Option<&Algorithm>) -> Result<SolverConfig> {
        let s = &self.solver;
        let mut cfg = SolverConfig::new(
            algorithm.map_or(s.formulation.unwrap_or(Formulation::Apx), |a| a.formulation),
            s.delta.unwrap_or(0.2),
        );
        cfg.epsilon_pps = algorithm
            .and_then(|a| a.epsilon_pps)
            .or(s.epsilon_pps)
            .unwrap_or(0.0);
        if let Some(t) = s.time_limit_s {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("solver.time_limit_s", "must be positive"));
            }
            cfg.time_limit = Duration::from_secs_f64(t);
        }
        if let Some(n) = s.node_limit {
            cfg.node_limit = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Epoch-loop settings for `algorithm` on a built instance.
    pub fn epoch_config(&self, instance: &Instance, algorithm: &Algorithm) -> Result<EpochConfig> {
        let e = &self.epoch;
        let planner = match self.solver.planner.unwrap_or(PlannerKind::Solve) {
            PlannerKind::Solve => Planner::Solve(self.solver_config(Some(algorithm))?),
            PlannerKind::AssignAll => {
                let net = &instance.network;
                Planner::Fixed(Allocation::from_indices(
                    net,
                    (0..net.num_flows()).map(|f| Some(net.path(f)[0])).collect(),
                )?)
            }
        };
        let default_estimator = match instance.flow_mode {
            FlowMode::Persistent => EstimatorMode::Bucket,
            FlowMode::PerEpoch => EstimatorMode::Declared,
        };
        Ok(EpochConfig {
            epoch_length_s: e.length_s.unwrap_or(5.0),
            bucket_s: e.bucket_s.unwrap_or(0.1),
            fully_sampled_tolerance: e.fully_sampled_tolerance.unwrap_or(0.05),
            estimator: EstimatorConfig {
                mode: e.estimator.unwrap_or(default_estimator),
                window_epochs: e.window_epochs.unwrap_or(5),
            },
            num_epochs: Some(self.num_epochs()),
            planner,
        })
    }

    /// Builds the network, traffic and queries for one seed.
    pub fn instance(&self, seed: u64) -> Result<Instance> {
        let epochs = self.num_epochs();
        if epochs == 0 {
            return Err(invalid("epoch.epochs", "must be positive"));
        }
        let epoch_len = self.epoch.length_s.unwrap_or(5.0);
        let bucket = self.epoch.bucket_s.unwrap_or(0.1);
        let bpe = EpochConfig {
            epoch_length_s: epoch_len,
            bucket_s: bucket,
            ..EpochConfig::new(Planner::Solve(SolverConfig::default()))
        }
        .buckets_per_epoch()?;
        let alpha = self.flows.target_rate.unwrap_or(0.1);
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(
                "flows.target_rate",
                format!("{alpha} is outside (0, 1]"),
            ));
        }
        let mode = self.flows.mode.unwrap_or(FlowMode::Persistent);
        let (switches, base_flows) = self.base_flows(seed, alpha)?;
        let t = &self.traffic;
        let source = t.source.unwrap_or(match self.network.kind {
            Some(NetworkKind::File) => TrafficSource::Declared,
            _ if t.trace.is_some() => TrafficSource::Trace,
            _ => TrafficSource::Mix,
        });
        let horizon = epochs * bpe;

        // Flow instances: (flow, base flow index, epoch it lives in).
        let mut flows: Vec<(FlowSpec, usize, Option<usize>)> = match mode {
            FlowMode::Persistent => base_flows
                .iter()
                .cloned()
                .enumerate()
                .map(|(i, f)| (f, i, None))
                .collect(),
            FlowMode::PerEpoch => (0..epochs)
                .flat_map(|e| {
                    base_flows.iter().enumerate().map(move |(i, f)| {
                        let mut f = f.clone();
                        f.id = format!("{}@e{e}", f.id);
                        (f, i, Some(e))
                    })
                })
                .collect(),
        };

        let mut clamped = Vec::new();
        let series: Vec<Vec<f64>> = match source {
            TrafficSource::Trace => {
                let path = t
                    .trace
                    .as_ref()
                    .ok_or_else(|| invalid("traffic.trace", "a trace file is required"))?;
                let trace = load_trace(
                    self.resolve_path(path),
                    t.scale_divisor.unwrap_or(1.0),
                    bucket,
                )?;
                let by_base: Vec<Vec<f64>> = match t.trace_match.unwrap_or(TraceMatch::Id) {
                    TraceMatch::Id => {
                        for id in trace.flow_ids() {
                            if !base_flows.iter().any(|f| &f.id == id) {
                                return Err(Error::UnknownFlow(id.clone()));
                            }
                        }
                        base_flows
                            .iter()
                            .map(|f| {
                                trace
                                    .series_of(&f.id)
                                    .map(<[f64]>::to_vec)
                                    .unwrap_or_default()
                            })
                            .collect()
                    }
                    TraceMatch::Order => {
                        if trace.flow_ids().len() < base_flows.len() {
                            return Err(invalid(
                                "traffic.trace",
                                format!(
                                    "{} trace flows for {} network flows",
                                    trace.flow_ids().len(),
                                    base_flows.len()
                                ),
                            ));
                        }
                        (0..base_flows.len())
                            .map(|i| trace.series(i).to_vec())
                            .collect()
                    }
                };
                if trace.num_buckets() > 0 && trace.num_buckets() < horizon {
                    return Err(Error::HorizonTooShort {
                        needed: horizon,
                        available: trace.num_buckets(),
                    });
                }
                // Declared moments: those of the replayed part of each series.
                for (f, i, _) in &mut flows {
                    let s: Vec<f64> = (0..horizon)
                        .map(|b| by_base[*i].get(b).copied().unwrap_or(0.0))
                        .collect();
                    let (m, v) = moments(&s);
                    f.rate_mean_pps = m;
                    f.rate_var_pps2 = v;
                }
                flows
                    .iter()
                    .map(|(_, i, _)| {
                        (0..horizon)
                            .map(|b| by_base[*i].get(b).copied().unwrap_or(0.0))
                            .collect()
                    })
                    .collect()
            }
            TrafficSource::Mix | TrafficSource::Declared => {
                let models: Vec<RateModel> = if source == TrafficSource::Mix {
                    self.mix()?.assign(
                        flows.len(),
                        t.packet_size_bytes.unwrap_or(1000.0),
                        derive(seed, 3),
                    )?
                } else {
                    let d = t.distribution.unwrap_or(RateDistribution::TruncNormal);
                    flows
                        .iter()
                        .map(|(f, _, _)| {
                            let cov = if f.rate_mean_pps > 0.0 {
                                f.rate_var_pps2.sqrt() / f.rate_mean_pps
                            } else {
                                0.0
                            };
                            RateModel::new(d, f.rate_mean_pps, cov)
                        })
                        .collect()
                };
                let specs: Vec<FlowSpec> = flows.iter().map(|(f, _, _)| f.clone()).collect();
                let tmp = build_network(switches.clone(), specs)?;
                let g = generate_rates(&tmp, &models, horizon, bucket, derive(seed, 4))?;
                clamped = g.clamped;
                for ((f, _, _), m) in flows.iter_mut().zip(&models) {
                    let (mean, var) = m.realized_moments();
                    f.rate_mean_pps = mean;
                    f.rate_var_pps2 = var;
                }
                (0..flows.len())
                    .map(|i| g.rates.series(i).to_vec())
                    .collect()
            }
        };

        let queries = self.queries(&flows, epochs, epoch_len, seed)?;
        let ids: Vec<String> = flows.iter().map(|(f, _, _)| f.id.clone()).collect();
        let network = build_network(switches, flows.into_iter().map(|(f, _, _)| f).collect())?;
        let rates = RateProcess::new(bucket, ids.into_iter().zip(series).collect())?;
        Ok(Instance {
            network,
            queries,
            rates,
            clamped,
            flow_mode: mode,
        })
    }

    fn mix(&self) -> Result<RateMix> {
        let t = &self.traffic;
        let d = RateMix::default();
        Ok(RateMix {
            distribution: t.distribution.unwrap_or(d.distribution),
            mean_kbps: t.mean_kbps.clone().unwrap_or(d.mean_kbps),
            low_cov: t.low_cov.unwrap_or(d.low_cov),
            high_cov: t.high_cov.unwrap_or(d.high_cov),
            low_cov_probability: t.low_cov_probability.unwrap_or(d.low_cov_probability),
        })
    }

    fn base_flows(&self, seed: u64, alpha: f64) -> Result<(Vec<SwitchSpec>, Vec<FlowSpec>)> {
        let n = &self.network;
        let cap = n.capacity_pps;
        if let Some(c) = cap {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(invalid(
                    "network.capacity_pps",
                    format!("{c} must be non-negative"),
                ));
            }
        }
        let kind = n.kind.unwrap_or(if n.path.is_some() {
            NetworkKind::File
        } else {
            NetworkKind::Abilene
        });
        match kind {
            NetworkKind::File => {
                let path = n
                    .path
                    .as_ref()
                    .ok_or_else(|| invalid("network.path", "a network file is required"))?;
                let net = Network::from_path(self.resolve_path(path))?;
                let mut switches = net.switches().to_vec();
                if let Some(c) = cap {
                    switches.iter_mut().for_each(|s| s.capacity_pps = c);
                }
                let mut flows = net.flows().to_vec();
                if self.flows.target_rate.is_some() {
                    flows.iter_mut().for_each(|f| f.target_rate = alpha);
                }
                Ok((switches, flows))
            }
            NetworkKind::SingleSwitch => {
                let count = self.flows.count.unwrap_or(20);
                let flows = (0..count)
                    .map(|i| FlowSpec::on_path(format!("f{i}"), &["S"], alpha, 0.0, 0.0))
                    .collect();
                Ok((vec![SwitchSpec::new("S", cap.unwrap_or(1e9))], flows))
            }
            NetworkKind::Abilene | NetworkKind::ScaleFree => {
                let topo = if kind == NetworkKind::Abilene {
                    Topology::abilene()
                } else {
                    let nodes = n
                        .nodes
                        .ok_or_else(|| invalid("network.nodes", "required for scale-free"))?;
                    if nodes < 2 {
                        return Err(invalid("network.nodes", "need at least 2"));
                    }
                    Topology::scale_free(nodes, n.attach.unwrap_or(2), derive(seed, 1))
                };
                let pairs = pick_pairs(topo.len(), self.flows.count, derive(seed, 2), kind)?;
                let mut router = topo.router();
                let flows = pairs
                    .into_iter()
                    .map(|(a, b)| {
                        let id = format!("{}-{}", topo.nodes[a], topo.nodes[b]);
                        router
                            .flow(id, a, b, alpha, 0.0, 0.0)
                            .expect("generated topologies are connected")
                    })
                    .collect();
                Ok((topo.switches(cap.unwrap_or(400.0)), flows))
            }
        }
    }

    fn queries(
        &self,
        flows: &[(FlowSpec, usize, Option<usize>)],
        epochs: usize,
        epoch_len: f64,
        seed: u64,
    ) -> Result<Vec<SamplingQuery>> {
        let mode = self.queries.mode.unwrap_or(QueryMode::All);
        let p = self.queries.probability.unwrap_or(0.8);
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("queries.probability", "must be in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, 5));
        let mut out = Vec::new();
        for (f, _, life) in flows {
            let alpha = f.target_rate;
            let span = match life {
                Some(e) => *e..*e + 1,
                None => 0..epochs,
            };
            match mode {
                QueryMode::All => out.push(SamplingQuery::new(
                    f.id.clone(),
                    span.start as f64 * epoch_len,
                    span.len() as f64 * epoch_len,
                    alpha,
                )),
                QueryMode::PerEpoch => {
                    for e in span {
                        if rng.random_bool(p) {
                            out.push(SamplingQuery::new(
                                f.id.clone(),
                                e as f64 * epoch_len,
                                epoch_len,
                                alpha,
                            ));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn moments(s: &[f64]) -> (f64, f64) {
    if s.is_empty() {
        return (0.0, 0.0);
    }
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    if s.len() < 2 {
        return (m, 0.0);
    }
    (
        m,
        s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

/// Independent sub-seed for one randomized step of instance construction.
fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn pick_pairs(
    nodes: usize,
    count: Option<usize>,
    seed: u64,
    kind: NetworkKind,
) -> Result<Vec<(usize, usize)>> {
    let all = nodes * (nodes - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decode = |i: usize| {
        let (a, r) = (i / (nodes - 1), i % (nodes - 1));
        (a, if r >= a { r + 1 } else { r })
    };
    match count {
        None if kind == NetworkKind::Abilene => Ok((0..all).map(decode).collect()),
        None => Err(invalid("flows.count", "required for scale-free networks")),
        Some(c) if c > all => Err(invalid(
            "flows.count",
            format!("{c} exceeds the {all} node pairs"),
        )),
        Some(c) => {
            let mut idx = sample(&mut rng, all, c).into_vec();
            idx.sort_unstable();
            Ok(idx.into_iter().map(decode).collect())
        }
    }
}

/// A built scenario instance for one seed.
#[derive(Debug, Clone)]
pub struct Instance {
    pub network: Network,
    pub queries: Vec<SamplingQuery>,
    pub rates: RateProcess,
    /// Flows whose uniform rate model was clamped at zero.
    pub clamped: Vec<String>,
    pub flow_mode: FlowMode,
}

/// A formulation plus, for cS+ε, its ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Algorithm {
    pub formulation: Formulation,
    pub epsilon_pps: Option<f64>,
}

impl Algorithm {
    pub fn new(formulation: Formulation) -> Self {
        Self {
            formulation,
            epsilon_pps: None,
        }
    }

    pub fn csamp(epsilon_pps: f64) -> Self {
        Self {
            formulation: Formulation::Csamp,
            epsilon_pps: Some(epsilon_pps),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.formulation, self.epsilon_pps) {
            (Formulation::Csamp, Some(e)) => write!(f, "cs+{e}"),
            (form, _) => write!(f, "{form}"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    /// `apx`, `exact`, `ds`, `ds2sigma`, `csamp`, or `cs+<ε>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        for prefix in ["cs+", "csamp+"] {
            if let Some(eps) = lower.strip_prefix(prefix) {
                let e: f64 = eps
                    .parse()
                    .map_err(|_| Error::Config(format!("bad epsilon in algorithm `{s}`")))?;
                return Ok(Self::csamp(e));
            }
        }
        if lower == "ds+2sigma" {
            return Ok(Self::new(Formulation::Ds2Sigma));
        }
        lower
            .parse::<Formulation>()
            .map(Self::new)
            .map_err(|_| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Result of one (algorithm, seed) run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: SimReport,
    pub summary: SimSummary,
    pub clamped: Vec<String>,
}

impl Scenario {
    pub fn run(&self, algorithm: &Algorithm, seed: u64) -> Result<RunOutput> {
        let inst = self.instance(seed)?;
        let cfg = self.epoch_config(&inst, algorithm)?;
        let report = run_simulation(
            &inst.network,
            &inst.queries,
            &inst.rates,
            &cfg,
            derive(seed, 6),
        )?;
        let summary = measure_metrics(&report);
        Ok(RunOutput {
            report,
            summary,
            clamped: inst.clamped,
        })
    }
}

/// Metrics pooled over several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub label: String,
    pub runs: usize,
    pub requested: usize,
    pub admitted: usize,
    pub fully_sampled: usize,
    pub measured_rate: Option<Quartiles>,
    pub mean_measured_rate: Option<f64>,
    pub switch_load_pps: Option<Quartiles>,
    pub violation_frequency: Option<f64>,
    pub dropped: u64,
    pub mean_solver_wall_s: f64,
    /// Fraction of epoch solves that finished within their limits.
    pub optimal_fraction: f64,
}

impl Aggregate {
    pub fn pool(label: impl Into<String>, runs: &[&SimReport]) -> Self {
        let summaries: Vec<SimSummary> = runs.iter().map(|r| measure_metrics(r)).collect();
        let rates: Vec<f64> = summaries
            .iter()
            .flat_map(|s| {
                s.flows
                    .iter()
                    .filter(|f| f.admitted_epochs > 0)
                    .filter_map(|f| f.measured_rate)
            })
            .collect();
        let mut loads = Vec::new();
        for r in runs {
            for (e, loaded) in r.switch_loaded.iter().enumerate() {
                for (s, &on) in loaded.iter().enumerate() {
                    if on {
                        let span = e * r.buckets_per_epoch..(e + 1) * r.buckets_per_epoch;
                        loads.extend(
                            r.switch_sampled[s][span]
                                .iter()
                                .map(|&k| k as f64 / r.bucket_s),
                        );
                    }
                }
            }
        }
        let loaded: usize = summaries.iter().map(|s| s.loaded_switch_buckets).sum();
        let violated: usize = summaries.iter().map(|s| s.violated_switch_buckets).sum();
        let epochs: Vec<_> = summaries.iter().flat_map(|s| &s.per_epoch).collect();
        let solves = epochs.len().max(1) as f64;
        Self {
            label: label.into(),
            runs: runs.len(),
            requested: summaries.iter().map(|s| s.requested_flows).sum(),
            admitted: summaries.iter().map(|s| s.admitted_flows).sum(),
            fully_sampled: summaries.iter().map(|s| s.fully_sampled_flows).sum(),
            measured_rate: Quartiles::of(&rates),
            mean_measured_rate: (!rates.is_empty())
                .then(|| rates.iter().sum::<f64>() / rates.len() as f64),
            switch_load_pps: Quartiles::of(&loads),
            violation_frequency: (loaded > 0).then(|| violated as f64 / loaded as f64),
            dropped: summaries.iter().map(|s| s.dropped).sum(),
            mean_solver_wall_s: epochs.iter().map(|e| e.solver_wall_s).sum::<f64>() / solves,
            optimal_fraction: epochs.iter().filter(|e| e.optimal).count() as f64 / solves,
        }
    }
}

/// Runs every (algorithm, seed) pair in parallel and pools per algorithm,
/// in the order given.
pub fn compare(
    scenario: &Scenario,
    algorithms: &[Algorithm],
    seeds: &[u64],
) -> Result<Vec<Aggregate>> {
    if algorithms.len() < 2 {
        return Err(Error::Config(
            "compare needs at least two algorithms".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    let jobs: Vec<(usize, u64)> = (0..algorithms.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<((usize, u64), SimReport)> = jobs
        .par_iter()
        .map(|&(a, s)| scenario.run(&algorithms[a], s).map(|o| ((a, s), o.report)))
        .collect::<Result<_>>()?;
    let keyed: BTreeMap<(usize, u64), SimReport> = results.into_iter().collect();
    Ok(algorithms
        .iter()
        .enumerate()
        .map(|(a, alg)| {
            let runs: Vec<&SimReport> = seeds.iter().map(|s| &keyed[&(a, *s)]).collect();
            Aggregate::pool(alg.to_string(), &runs)
        })
        .collect())
}

/// Re-runs the scenario for every value of its sweep, pooling over seeds.
pub fn sweep(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<Aggregate>> {
    let sw = scenario
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no [sweep] section".into()))?;
    let variants: Vec<(String, Scenario)> = match (&sw.epoch_lengths_s, &sw.distributions) {
        (Some(lengths), None) => lengths
            .iter()
            .map(|&l| {
                let mut s = scenario.clone();
                s.epoch.length_s = Some(l);
                (format!("epoch={l}s"), s)
            })
            .collect(),
        (None, Some(dists)) => dists
            .iter()
            .map(|&d| {
                let mut s = scenario.clone();
                s.traffic.distribution = Some(d);
                (d.name().to_string(), s)
            })
            .collect(),
        _ => {
            return Err(Error::Config(
                "[sweep] needs exactly one of epoch_lengths_s, distributions".into(),
            ))
        }
    };
    if seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    let algorithm = scenario.algorithms()?[0];
    variants
        .par_iter()
        .map(|(label, s)| {
            let reports = seeds
                .iter()
                .map(|&seed| s.run(&algorithm, seed).map(|o| o.report))
                .collect::<Result<Vec<_>>>()?;
            Ok(Aggregate::pool(
                label.clone(),
                &reports.iter().collect::<Vec<_>>(),
            ))
        })
        .collect()
}
