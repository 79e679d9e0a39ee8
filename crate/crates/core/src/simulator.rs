//! Epoch-driven replay of a rate process through sampling schedules.
//!
//! At every epoch boundary the active queries are batched, flow moments are
//! estimated, and a planner fixes which switch samples which flow for the
//! whole epoch. Inside the epoch, time advances in buckets: each active flow
//! offers `rate · bucket` packets (with fractional carry), each packet is
//! sampled with probability α, and each switch forwards at most
//! `floor(B · bucket)` sampled packets, dropping a uniformly random subset of
//! the excess.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{build_network, Allocation, FlowSpec, Network};
use crate::optimizer::{solve, SolverConfig};
use crate::stats::{estimate_flow_stats, Quartiles, RateHistory};
use crate::trafficgen::RateProcess;

pub const FLOW_CSV_SCHEMA: &str = "flowsamp.sim-flows/v1";
pub const SWITCH_CSV_SCHEMA: &str = "flowsamp.sim-switches/v1";
pub const SUMMARY_SCHEMA: &str = "flowsamp.sim-summary/v1";

const GRID_EPS: f64 = 1e-9;

/// A request to sample `flow` at `sampling_rate` during
/// `[start_s, start_s + duration_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingQuery {
    pub flow: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub sampling_rate: f64,
}

impl SamplingQuery {
    pub fn new(flow: impl Into<String>, start_s: f64, duration_s: f64, sampling_rate: f64) -> Self {
        Self {
            flow: flow.into(),
            start_s,
            duration_s,
            sampling_rate,
        }
    }

    fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("query[{}].{name}", self.flow);
        if !(self.start_s >= 0.0 && self.start_s.is_finite()) {
            return Err(invalid(field("start"), "must be finite and non-negative"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid(field("duration"), "must be positive"));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(invalid(field("sampling_rate"), "must be in (0, 1]"));
        }
        Ok(())
    }

    /// Epochs whose start lies inside the query span. A query arriving
    /// mid-epoch is first served at the next boundary.
    fn epochs(&self, epoch_length_s: f64) -> std::ops::Range<usize> {
        let first = (self.start_s / epoch_length_s - GRID_EPS).ceil().max(0.0) as usize;
        let end_t = self.start_s + self.duration_s;
        let end = (end_t / epoch_length_s - GRID_EPS).ceil().max(0.0) as usize;
        first..end.max(first)
    }
}

/// Where the per-epoch flow moments handed to the planner come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// Always the moments declared on the flow.
    Declared,
    /// Mean and variance of the per-bucket rates observed over the last
    /// `window_epochs` epochs.
    Bucket,
    /// Mean and variance of the per-epoch mean rates over the last
    /// `window_epochs` epochs.
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub window_epochs: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::Bucket,
            window_epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Planner {
    /// Re-solve every epoch with this configuration.
    Solve(SolverConfig),
    /// The same allocation every epoch, applied to the active flows.
    Fixed(Allocation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochConfig {
    pub epoch_length_s: f64,
    pub bucket_s: f64,
    pub fully_sampled_tolerance: f64,
    pub estimator: EstimatorConfig,
    /// Defaults to the last epoch any query is active in.
    pub num_epochs: Option<usize>,
    pub planner: Planner,
}

impl EpochConfig {
    pub fn new(planner: Planner) -> Self {
        Self {
            epoch_length_s: 5.0,
            bucket_s: 0.1,
            fully_sampled_tolerance: 0.05,
            estimator: EstimatorConfig::default(),
            num_epochs: None,
            planner,
        }
    }

    pub fn buckets_per_epoch(&self) -> Result<usize> {
        if !(self.bucket_s > 0.0 && self.bucket_s.is_finite()) {
            return Err(invalid("bucket", "must be positive"));
        }
        if !(self.epoch_length_s > 0.0 && self.epoch_length_s.is_finite()) {
            return Err(invalid("epoch_length", "must be positive"));
        }
        let ratio = self.epoch_length_s / self.bucket_s;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(invalid(
                "epoch_length",
                format!(
                    "{} s is not a multiple of the {} s bucket",
                    self.epoch_length_s, self.bucket_s
                ),
            ));
        }
        Ok(ratio.round() as usize)
    }

    fn validate(&self) -> Result<usize> {
        let bpe = self.buckets_per_epoch()?;
        if !(0.0..1.0).contains(&self.fully_sampled_tolerance) {
            return Err(invalid("fully_sampled_tolerance", "must be in [0, 1)"));
        }
        if self.estimator.window_epochs == 0 {
            return Err(invalid("estimator.window", "must be positive"));
        }
        if let Planner::Solve(cfg) = &self.planner {
            cfg.validate()?;
        }
        Ok(bpe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub index: usize,
    pub start_s: f64,
    pub active_flows: usize,
    pub admitted_flows: usize,
    pub optimal: bool,
    pub nodes_explored: u64,
    pub solver_wall_s: f64,
}

/// One flow in one epoch. Packet counts cover the epoch's buckets; `offered`
/// counts only while the flow has an active query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEpoch {
    pub target_rate: Option<f64>,
    pub switch: Option<usize>,
    pub offered: u64,
    pub sampled: u64,
    pub forwarded: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub flow_ids: Vec<String>,
    pub switch_ids: Vec<String>,
    pub epoch_length_s: f64,
    pub bucket_s: f64,
    pub buckets_per_epoch: usize,
    pub fully_sampled_tolerance: f64,
    pub epochs: Vec<EpochRecord>,
    /// `flow_epochs[e][f]`.
    pub flow_epochs: Vec<Vec<FlowEpoch>>,
    /// Sampled packets reaching each switch per bucket, before drops:
    /// `switch_sampled[s][bucket]`.
    pub switch_sampled: Vec<Vec<u64>>,
    /// Whether a switch had any assigned flow, per epoch: `switch_loaded[e][s]`.
    pub switch_loaded: Vec<Vec<bool>>,
    /// Per-bucket forwarding budget of each switch.
    pub bucket_capacity: Vec<u64>,
}

impl SimReport {
    pub fn num_buckets(&self) -> usize {
        self.epochs.len() * self.buckets_per_epoch
    }

    pub fn violated(&self, switch: usize, bucket: usize) -> bool {
        self.switch_sampled[switch][bucket] > self.bucket_capacity[switch]
    }

    pub fn forwarded_at(&self, switch: usize, bucket: usize) -> u64 {
        self.switch_sampled[switch][bucket].min(self.bucket_capacity[switch])
    }

    /// One row per flow per epoch.
    pub fn write_flow_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {FLOW_CSV_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "epoch_start_s",
            "flow",
            "target_rate",
            "switch",
            "offered",
            "sampled",
            "forwarded",
            "dropped",
        ])?;
        for (e, rows) in self.flow_epochs.iter().enumerate() {
            let start = format!("{}", e as f64 * self.epoch_length_s);
            for (f, r) in rows.iter().enumerate() {
                w.write_record([
                    e.to_string(),
                    start.clone(),
                    self.flow_ids[f].clone(),
                    r.target_rate.map(|a| a.to_string()).unwrap_or_default(),
                    r.switch
                        .map(|s| self.switch_ids[s].clone())
                        .unwrap_or_default(),
                    r.offered.to_string(),
                    r.sampled.to_string(),
                    r.forwarded.to_string(),
                    r.dropped.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per switch per bucket.
    pub fn write_switch_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {SWITCH_CSV_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "bucket",
            "bucket_start_s",
            "switch",
            "sampled",
            "forwarded",
            "capacity",
            "violated",
        ])?;
        for b in 0..self.num_buckets() {
            let start = format!("{}", b as f64 * self.bucket_s);
            for (s, id) in self.switch_ids.iter().enumerate() {
                w.write_record([
                    b.to_string(),
                    start.clone(),
                    id.clone(),
                    self.switch_sampled[s][b].to_string(),
                    self.forwarded_at(s, b).to_string(),
                    self.bucket_capacity[s].to_string(),
                    u8::from(self.violated(s, b)).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub id: String,
    pub active_epochs: usize,
    pub admitted_epochs: usize,
    pub offered: u64,
    pub forwarded: u64,
    pub dropped: u64,
    /// Offered-weighted target over the active epochs.
    pub target_rate: Option<f64>,
    /// `forwarded / offered`, absent when nothing was offered.
    pub measured_rate: Option<f64>,
    pub fully_sampled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub schema: String,
    pub epochs: usize,
    pub buckets: usize,
    /// Flows with at least one active epoch.
    pub requested_flows: usize,
    /// Flows assigned a switch in at least one epoch.
    pub admitted_flows: usize,
    pub fully_sampled_flows: usize,
    /// Measured sampling rates of admitted flows.
    pub measured_rate: Option<Quartiles>,
    pub mean_measured_rate: Option<f64>,
    /// Sampled-packet load of switches with assigned flows, in pps.
    pub switch_load_pps: Option<Quartiles>,
    pub loaded_switch_buckets: usize,
    pub violated_switch_buckets: usize,
    /// `violated / loaded` switch-buckets.
    pub violation_frequency: Option<f64>,
    pub offered: u64,
    pub sampled: u64,
    pub forwarded: u64,
    pub dropped: u64,
    pub mean_solver_wall_s: f64,
    pub per_epoch: Vec<EpochRecord>,
    pub flows: Vec<FlowSummary>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregate metrics of a finished run.
pub fn measure_metrics(report: &SimReport) -> SimSummary {
    let tol = report.fully_sampled_tolerance;
    let flows: Vec<FlowSummary> = report
        .flow_ids
        .iter()
        .enumerate()
        .map(|(f, id)| {
            let rows = report.flow_epochs.iter().map(|r| &r[f]);
            let (mut active, mut admitted) = (0, 0);
            let (mut offered, mut forwarded, mut dropped) = (0u64, 0u64, 0u64);
            let (mut weighted, mut max_alpha) = (0.0, 0.0f64);
            for r in rows {
                if let Some(a) = r.target_rate {
                    active += 1;
                    weighted += a * r.offered as f64;
                    max_alpha = max_alpha.max(a);
                }
                admitted += usize::from(r.switch.is_some());
                offered += r.offered;
                forwarded += r.forwarded;
                dropped += r.dropped;
            }
            let target_rate = (active > 0).then(|| {
                if offered > 0 {
                    weighted / offered as f64
                } else {
                    max_alpha
                }
            });
            let measured_rate = (offered > 0).then(|| forwarded as f64 / offered as f64);
            let fully_sampled = active > 0
                && admitted == active
                && matches!((measured_rate, target_rate), (Some(m), Some(t)) if m >= t * (1.0 - tol) - 1e-12);
            FlowSummary {
                id: id.clone(),
                active_epochs: active,
                admitted_epochs: admitted,
                offered,
                forwarded,
                dropped,
                target_rate,
                measured_rate,
                fully_sampled,
            }
        })
        .collect();

    let rates: Vec<f64> = flows
        .iter()
        .filter(|f| f.admitted_epochs > 0)
        .filter_map(|f| f.measured_rate)
        .collect();
    let mut loads = Vec::new();
    let mut violated = 0;
    for (e, loaded) in report.switch_loaded.iter().enumerate() {
        for (s, &on) in loaded.iter().enumerate() {
            if !on {
                continue;
            }
            for b in e * report.buckets_per_epoch..(e + 1) * report.buckets_per_epoch {
                loads.push(report.switch_sampled[s][b] as f64 / report.bucket_s);
                violated += usize::from(report.violated(s, b));
            }
        }
    }
    let sampled = report.flow_epochs.iter().flatten().map(|r| r.sampled).sum();
    let walls: Vec<f64> = report.epochs.iter().map(|e| e.solver_wall_s).collect();
    SimSummary {
        schema: SUMMARY_SCHEMA.to_string(),
        epochs: report.epochs.len(),
        buckets: report.num_buckets(),
        requested_flows: flows.iter().filter(|f| f.active_epochs > 0).count(),
        admitted_flows: flows.iter().filter(|f| f.admitted_epochs > 0).count(),
        fully_sampled_flows: flows.iter().filter(|f| f.fully_sampled).count(),
        measured_rate: Quartiles::of(&rates),
        mean_measured_rate: mean(&rates),
        switch_load_pps: Quartiles::of(&loads),
        loaded_switch_buckets: loads.len(),
        violated_switch_buckets: violated,
        violation_frequency: (!loads.is_empty()).then(|| violated as f64 / loads.len() as f64),
        offered: flows.iter().map(|f| f.offered).sum(),
        sampled,
        forwarded: flows.iter().map(|f| f.forwarded).sum(),
        dropped: flows.iter().map(|f| f.dropped).sum(),
        mean_solver_wall_s: mean(&walls).unwrap_or(0.0),
        per_epoch: report.epochs.clone(),
        flows,
    }
}

struct Estimator {
    config: EstimatorConfig,
    buckets_per_epoch: usize,
    histories: Vec<RateHistory>,
    epoch_sum: Vec<f64>,
}

impl Estimator {
    fn new(config: EstimatorConfig, buckets_per_epoch: usize, num_flows: usize) -> Self {
        let track = config.mode != EstimatorMode::Declared;
        Self {
            config,
            buckets_per_epoch,
            histories: vec![RateHistory::new(); if track { num_flows } else { 0 }],
            epoch_sum: vec![0.0; if track { num_flows } else { 0 }],
        }
    }

    fn window(&self) -> usize {
        match self.config.mode {
            EstimatorMode::Bucket => self.config.window_epochs * self.buckets_per_epoch,
            _ => self.config.window_epochs,
        }
    }

    fn observe_bucket(&mut self, flow: usize, bucket: u64, rate_pps: f64) -> Result<()> {
        match self.config.mode {
            EstimatorMode::Declared => {}
            EstimatorMode::Bucket => {
                let keep = self.window();
                let h = &mut self.histories[flow];
                h.push(bucket, rate_pps)?;
                h.truncate_front(keep);
            }
            EstimatorMode::Epoch => self.epoch_sum[flow] += rate_pps,
        }
        Ok(())
    }

    fn end_epoch(&mut self, epoch: u64) -> Result<()> {
        if self.config.mode == EstimatorMode::Epoch {
            let keep = self.window();
            for (h, sum) in self.histories.iter_mut().zip(&mut self.epoch_sum) {
                h.push(epoch, *sum / self.buckets_per_epoch as f64)?;
                h.truncate_front(keep);
                *sum = 0.0;
            }
        }
        Ok(())
    }

    /// Rate mean and variance for `flow`; declared moments until at least two
    /// observations exist.
    fn estimate(&self, flow: usize, declared: &FlowSpec) -> Result<(f64, f64)> {
        match self.histories.get(flow) {
            Some(h) if h.len() >= 2 => estimate_flow_stats(h, self.window()),
            _ => Ok((declared.rate_mean_pps, declared.rate_var_pps2)),
        }
    }
}

struct Plan {
    assignment: Vec<Option<usize>>,
    optimal: bool,
    nodes: u64,
    wall_s: f64,
}

fn plan_epoch(
    network: &Network,
    planner: &Planner,
    active: &[(usize, f64)],
    moments: &[(f64, f64)],
) -> Result<Plan> {
    let mut assignment = vec![None; network.num_flows()];
    match planner {
        Planner::Fixed(alloc) => {
            for &(f, _) in active {
                assignment[f] = alloc.switch_of(f);
            }
            Ok(Plan {
                assignment,
                optimal: true,
                nodes: 0,
                wall_s: 0.0,
            })
        }
        Planner::Solve(_) if active.is_empty() => Ok(Plan {
            assignment,
            optimal: true,
            nodes: 0,
            wall_s: 0.0,
        }),
        Planner::Solve(cfg) => {
            let flows = active
                .iter()
                .zip(moments)
                .map(|(&(f, alpha), &(m, v))| FlowSpec {
                    target_rate: alpha,
                    rate_mean_pps: m.max(0.0),
                    rate_var_pps2: v.max(0.0),
                    ..network.flows()[f].clone()
                })
                .collect();
            let sub = build_network(network.switches().to_vec(), flows)?;
            let res = solve(&sub, cfg)?;
            for (i, &(f, _)) in active.iter().enumerate() {
                assignment[f] = res.allocation.switch_of(i);
            }
            Ok(Plan {
                assignment,
                optimal: res.optimal,
                nodes: res.nodes_explored,
                wall_s: res.wall_time.as_secs_f64(),
            })
        }
    }
}

/// Number of kept packets among `k` drawn without replacement from `pool`
/// packets of which `keep` are kept (a hypergeometric draw, by selection
/// sampling).
fn draw_kept(rng: &mut ChaCha8Rng, pool: u64, keep: u64, k: u64) -> u64 {
    let (mut pool, mut keep, mut kept) = (pool, keep, 0);
    for _ in 0..k {
        if keep == 0 {
            break;
        }
        if keep == pool || rng.random_range(0..pool) < keep {
            keep -= 1;
            kept += 1;
        }
        pool -= 1;
    }
    kept
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Replays `rates` through per-epoch schedules. The result is a pure
/// function of the inputs and `seed`, apart from solver wall times.
pub fn run_simulation(
    network: &Network,
    queries: &[SamplingQuery],
    rates: &RateProcess,
    config: &EpochConfig,
    seed: u64,
) -> Result<SimReport> {
    let bpe = config.validate()?;
    let nf = network.num_flows();
    let ns = network.num_switches();
    if let Planner::Fixed(alloc) = &config.planner {
        if alloc.len() != nf {
            return Err(Error::AllocationSize {
                expected: nf,
                found: alloc.len(),
            });
        }
        alloc.validate(network)?;
    }
    for q in queries {
        q.validate()?;
        if network.flow_idx(&q.flow).is_none() {
            return Err(Error::UnknownFlow(q.flow.clone()));
        }
    }

    let num_epochs = config.num_epochs.unwrap_or_else(|| {
        queries
            .iter()
            .map(|q| q.epochs(config.epoch_length_s).end)
            .max()
            .unwrap_or(0)
    });
    let horizon = num_epochs * bpe;
    let rates = if rates.num_buckets() == 0 {
        None
    } else {
        if (rates.bucket_s() - config.bucket_s).abs() > GRID_EPS {
            return Err(invalid(
                "bucket",
                format!(
                    "rate process uses {} s buckets, simulation {} s",
                    rates.bucket_s(),
                    config.bucket_s
                ),
            ));
        }
        if rates.num_buckets() < horizon {
            return Err(Error::HorizonTooShort {
                needed: horizon,
                available: rates.num_buckets(),
            });
        }
        Some(
            if rates
                .flow_ids()
                .iter()
                .map(String::as_str)
                .eq(network.flows().iter().map(|f| f.id.as_str()))
            {
                rates.clone()
            } else {
                rates.aligned_to(network, false)?
            },
        )
    };

    // Highest requested rate of each flow in each epoch.
    let mut alpha = vec![vec![None::<f64>; nf]; num_epochs];
    for q in queries {
        let f = network.flow_idx(&q.flow).expect("checked above");
        for e in q.epochs(config.epoch_length_s) {
            if let Some(slot) = alpha.get_mut(e) {
                let a = slot[f].get_or_insert(q.sampling_rate);
                *a = a.max(q.sampling_rate);
            }
        }
    }

    let bucket_capacity: Vec<u64> = (0..ns)
        .map(|s| {
            (network.capacity(s) * config.bucket_s + GRID_EPS)
                .floor()
                .max(0.0) as u64
        })
        .collect();
    let mut flow_rng: Vec<ChaCha8Rng> = (0..nf).map(|f| stream(seed, f as u64 + 1)).collect();
    let mut switch_rng: Vec<ChaCha8Rng> =
        (0..ns).map(|s| stream(seed, u64::MAX - s as u64)).collect();
    let mut estimator = Estimator::new(config.estimator, bpe, nf);
    let mut carry = vec![0.0f64; nf];
    let mut epochs = Vec::with_capacity(num_epochs);
    let mut flow_epochs = Vec::with_capacity(num_epochs);
    let mut switch_sampled = vec![vec![0u64; horizon]; ns];
    let mut switch_loaded = Vec::with_capacity(num_epochs);
    let mut per_switch: Vec<Vec<(usize, u64)>> = vec![Vec::new(); ns];

    for (e, alpha_e) in alpha.iter().enumerate() {
        let active: Vec<(usize, f64)> = alpha_e
            .iter()
            .enumerate()
            .filter_map(|(f, a)| a.map(|a| (f, a)))
            .collect();
        let moments = active
            .iter()
            .map(|&(f, _)| estimator.estimate(f, &network.flows()[f]))
            .collect::<Result<Vec<_>>>()?;
        let plan = plan_epoch(network, &config.planner, &active, &moments)?;
        let mut rows: Vec<FlowEpoch> = (0..nf)
            .map(|f| FlowEpoch {
                target_rate: alpha_e[f],
                switch: plan.assignment[f],
                offered: 0,
                sampled: 0,
                forwarded: 0,
                dropped: 0,
            })
            .collect();
        let mut loaded = vec![false; ns];
        for s in plan.assignment.iter().flatten() {
            loaded[*s] = true;
        }
        epochs.push(EpochRecord {
            index: e,
            start_s: e as f64 * config.epoch_length_s,
            active_flows: active.len(),
            admitted_flows: plan.assignment.iter().filter(|s| s.is_some()).count(),
            optimal: plan.optimal,
            nodes_explored: plan.nodes,
            solver_wall_s: plan.wall_s,
        });

        for b in 0..bpe {
            let g = e * bpe + b;
            for list in &mut per_switch {
                list.clear();
            }
            for f in 0..nf {
                let rate = rates.as_ref().map_or(0.0, |r| r.rate(f, g));
                carry[f] += rate * config.bucket_s;
                let n = (carry[f] + GRID_EPS).floor().max(0.0);
                carry[f] -= n;
                let n = n as u64;
                estimator.observe_bucket(f, g as u64, n as f64 / config.bucket_s)?;
                let Some(a) = alpha_e[f] else { continue };
                rows[f].offered += n;
                let k = if n == 0 {
                    0
                } else {
                    Binomial::new(n, a)
                        .map_err(|err| invalid("sampling_rate", err.to_string()))?
                        .sample(&mut flow_rng[f])
                };
                if let Some(s) = plan.assignment[f] {
                    rows[f].sampled += k;
                    per_switch[s].push((f, k));
                }
            }
            for s in 0..ns {
                let total: u64 = per_switch[s].iter().map(|&(_, k)| k).sum();
                switch_sampled[s][g] = total;
                let cap = bucket_capacity[s];
                if total <= cap {
                    for &(f, k) in &per_switch[s] {
                        rows[f].forwarded += k;
                    }
                    continue;
                }
                // Keep a uniformly random `cap`-subset of the sampled packets.
                let (mut pool, mut keep) = (total, cap);
                for &(f, k) in &per_switch[s] {
                    let kept = draw_kept(&mut switch_rng[s], pool, keep, k);
                    rows[f].forwarded += kept;
                    rows[f].dropped += k - kept;
                    pool -= k;
                    keep -= kept;
                }
            }
        }
        estimator.end_epoch(e as u64)?;
        flow_epochs.push(rows);
        switch_loaded.push(loaded);
    }

    Ok(SimReport {
        flow_ids: network.flows().iter().map(|f| f.id.clone()).collect(),
        switch_ids: network.switches().iter().map(|s| s.id.clone()).collect(),
        epoch_length_s: config.epoch_length_s,
        bucket_s: config.bucket_s,
        buckets_per_epoch: bpe,
        fully_sampled_tolerance: config.fully_sampled_tolerance,
        epochs,
        flow_epochs,
        switch_sampled,
        switch_loaded,
        bucket_capacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SwitchSpec;
    use crate::optimizer::Formulation;

    fn one_switch(capacity: f64, flows: usize, mean: f64, var: f64, alpha: f64) -> Network {
        build_network(
            vec![SwitchSpec::new("S", capacity)],
            (0..flows)
                .map(|i| FlowSpec::on_path(format!("f{i}"), &["S"], alpha, mean, var))
                .collect(),
        )
        .unwrap()
    }

    fn constant(net: &Network, rate: f64, buckets: usize) -> RateProcess {
        RateProcess::new(
            0.1,
            net.flows()
                .iter()
                .map(|f| (f.id.clone(), vec![rate; buckets]))
                .collect(),
        )
        .unwrap()
    }

    fn all_on(net: &Network, duration: f64, alpha: f64) -> Vec<SamplingQuery> {
        net.flows()
            .iter()
            .map(|f| SamplingQuery::new(f.id.clone(), 0.0, duration, alpha))
            .collect()
    }

    fn apx() -> Planner {
        Planner::Solve(SolverConfig::new(Formulation::Apx, 0.2))
    }

    #[test]
    fn single_flow_binomial_count() {
        let net = one_switch(1e9, 1, 1000.0, 0.0, 0.1);
        let rates = constant(&net, 1000.0, 50);
        let cfg = EpochConfig::new(apx());
        let report = run_simulation(&net, &all_on(&net, 5.0, 0.1), &rates, &cfg, 3).unwrap();
        let row = report.flow_epochs[0][0];
        assert_eq!(row.offered, 5000);
        assert!(
            (row.forwarded as i64 - 500).abs() <= 45,
            "{}",
            row.forwarded
        );
        let summary = measure_metrics(&report);
        assert_eq!(
            (summary.admitted_flows, summary.fully_sampled_flows),
            (1, 1)
        );
        assert_eq!(summary.violated_switch_buckets, 0);
    }

    #[test]
    fn zero_queries() {
        let net = one_switch(10.0, 3, 100.0, 0.0, 0.1);
        let rates = constant(&net, 100.0, 10);
        let report = run_simulation(&net, &[], &rates, &EpochConfig::new(apx()), 1).unwrap();
        let s = measure_metrics(&report);
        assert_eq!(
            (s.epochs, s.admitted_flows, s.fully_sampled_flows),
            (0, 0, 0)
        );
        assert_eq!(
            (s.offered, s.forwarded, s.violated_switch_buckets),
            (0, 0, 0)
        );
        assert!(s.measured_rate.is_none() && s.violation_frequency.is_none());
    }

    #[test]
    fn half_dropped_is_not_fully_sampled() {
        let net = one_switch(50.0, 1, 1000.0, 0.0, 0.1);
        let rates = constant(&net, 1000.0, 50);
        let cfg = EpochConfig::new(Planner::Fixed(
            Allocation::from_indices(&net, vec![Some(0)]).unwrap(),
        ));
        let report = run_simulation(&net, &all_on(&net, 5.0, 0.1), &rates, &cfg, 7).unwrap();
        let s = measure_metrics(&report);
        let rate = s.flows[0].measured_rate.unwrap();
        assert!((rate - 0.05).abs() < 0.005, "{rate}");
        assert_eq!((s.admitted_flows, s.fully_sampled_flows), (1, 0));
        assert!(s.violation_frequency.unwrap() > 0.5);
    }

    #[test]
    fn conservation_and_capacity() {
        let net = one_switch(300.0, 8, 400.0, 90_000.0, 0.1);
        let models = vec![
            crate::trafficgen::RateModel::new(
                crate::trafficgen::RateDistribution::TruncNormal,
                400.0,
                0.75
            );
            8
        ];
        let rates = crate::trafficgen::generate_rates(&net, &models, 100, 0.1, 5)
            .unwrap()
            .rates;
        let cfg = EpochConfig {
            planner: Planner::Fixed(Allocation::from_indices(&net, vec![Some(0); 8]).unwrap()),
            ..EpochConfig::new(apx())
        };
        let report = run_simulation(&net, &all_on(&net, 10.0, 0.1), &rates, &cfg, 2).unwrap();
        for rows in &report.flow_epochs {
            for r in rows {
                assert!(r.offered >= r.sampled);
                assert_eq!(r.sampled, r.forwarded + r.dropped);
            }
        }
        let mut dropped_total = 0;
        for b in 0..report.num_buckets() {
            assert!(report.forwarded_at(0, b) <= report.bucket_capacity[0]);
            dropped_total += report.switch_sampled[0][b] - report.forwarded_at(0, b);
        }
        let s = measure_metrics(&report);
        assert_eq!(dropped_total, s.dropped);
        assert_eq!(s.sampled, s.forwarded + s.dropped);
    }

    #[test]
    fn deterministic_per_seed() {
        let net = one_switch(200.0, 6, 300.0, 40_000.0, 0.1);
        let models = vec![
            crate::trafficgen::RateModel::new(
                crate::trafficgen::RateDistribution::Gamma,
                300.0,
                0.7
            );
            6
        ];
        let rates = crate::trafficgen::generate_rates(&net, &models, 150, 0.1, 1)
            .unwrap()
            .rates;
        let q = all_on(&net, 15.0, 0.1);
        let cfg = EpochConfig::new(apx());
        let strip = |mut r: SimReport| {
            for e in &mut r.epochs {
                e.solver_wall_s = 0.0;
            }
            r
        };
        let a = strip(run_simulation(&net, &q, &rates, &cfg, 11).unwrap());
        let b = strip(run_simulation(&net, &q, &rates, &cfg, 11).unwrap());
        assert_eq!(a, b);
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        a.write_flow_csv(&mut csv_a).unwrap();
        b.write_flow_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        let c = strip(run_simulation(&net, &q, &rates, &cfg, 12).unwrap());
        assert_ne!(a.flow_epochs, c.flow_epochs);
    }

    #[test]
    fn mid_epoch_query_waits_for_boundary() {
        let net = one_switch(1e9, 1, 100.0, 0.0, 0.1);
        let rates = constant(&net, 100.0, 150);
        let q = [SamplingQuery::new("f0", 2.5, 5.0, 0.1)];
        let report = run_simulation(&net, &q, &rates, &EpochConfig::new(apx()), 1).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert_eq!(report.flow_epochs[0][0].target_rate, None);
        assert_eq!(report.flow_epochs[1][0].target_rate, Some(0.1));
        assert_eq!(report.flow_epochs[0][0].offered, 0);
    }

    #[test]
    fn input_errors() {
        let net = one_switch(100.0, 1, 100.0, 0.0, 0.1);
        let rates = constant(&net, 100.0, 20);
        let cfg = EpochConfig::new(apx());
        let ghost = [SamplingQuery::new("ghost", 0.0, 1.0, 0.1)];
        assert!(matches!(
            run_simulation(&net, &ghost, &rates, &cfg, 0),
            Err(Error::UnknownFlow(_))
        ));
        let long = all_on(&net, 10.0, 0.1);
        assert!(matches!(
            run_simulation(&net, &long, &rates, &cfg, 0),
            Err(Error::HorizonTooShort {
                needed: 100,
                available: 20
            })
        ));
        let bad = EpochConfig {
            epoch_length_s: 0.25,
            ..EpochConfig::new(apx())
        };
        assert!(run_simulation(&net, &long, &rates, &bad, 0).is_err());
    }

    #[test]
    fn empty_rate_process_is_silent() {
        let net = one_switch(100.0, 2, 100.0, 0.0, 0.1);
        let empty = RateProcess::new(0.1, vec![]).unwrap();
        let report = run_simulation(
            &net,
            &all_on(&net, 10.0, 0.1),
            &empty,
            &EpochConfig::new(apx()),
            0,
        )
        .unwrap();
        let s = measure_metrics(&report);
        assert_eq!((s.epochs, s.offered, s.admitted_flows), (2, 0, 2));
        assert!(s.measured_rate.is_none());
    }

    #[test]
    fn estimator_uses_history_after_warm_up() {
        // Declared moments say the flows are tiny; the observed rates do not.
        let net = one_switch(100.0, 4, 1.0, 0.0, 0.1);
        let rates = constant(&net, 400.0, 100);
        let q = all_on(&net, 10.0, 0.1);
        let declared = EpochConfig {
            estimator: EstimatorConfig {
                mode: EstimatorMode::Declared,
                window_epochs: 5,
            },
            ..EpochConfig::new(apx())
        };
        let r = run_simulation(&net, &q, &rates, &declared, 0).unwrap();
        assert_eq!(
            (r.epochs[0].admitted_flows, r.epochs[1].admitted_flows),
            (4, 4)
        );
        let r = run_simulation(&net, &q, &rates, &EpochConfig::new(apx()), 0).unwrap();
        assert_eq!(
            (r.epochs[0].admitted_flows, r.epochs[1].admitted_flows),
            (4, 2)
        );
    }

    #[test]
    fn csv_shape() {
        let net = one_switch(100.0, 2, 100.0, 0.0, 0.1);
        let rates = constant(&net, 100.0, 20);
        let report = run_simulation(
            &net,
            &all_on(&net, 2.0, 0.1),
            &rates,
            &EpochConfig {
                epoch_length_s: 1.0,
                ..EpochConfig::new(apx())
            },
            0,
        )
        .unwrap();
        let mut out = Vec::new();
        report.write_flow_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# {FLOW_CSV_SCHEMA}"));
        assert!(lines[1].starts_with("epoch,epoch_start_s,flow"));
        assert_eq!(lines.len(), 2 + 2 * 2);
        let mut out = Vec::new();
        report.write_switch_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 2 + 20);
    }
}
