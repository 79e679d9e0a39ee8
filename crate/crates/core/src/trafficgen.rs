//! Time-varying per-flow rate processes: synthetic draws from a rate model,
//! or pre-bucketed traces.
//!
//! Trace files are plain text:
//!
//! ```text
//! #dsamp-trace v1
//! # bucket_start_ms, flow_id, rate_pps
//! 0, f1, 120.5
//! 100, f1, 98.0
//! ```
//!
//! Missing `(flow, bucket)` entries read as rate 0.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Gamma, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Network;
use crate::stats::{normal_cdf, normal_pdf};

pub const TRACE_HEADER: &str = "#dsamp-trace v1";

/// Degrees of freedom of the location-scale Student-t rate model.
pub const T_DEGREES_OF_FREEDOM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateDistribution {
    /// Normal, truncated at zero by rejection.
    TruncNormal,
    Gamma,
    Uniform,
    /// Location-scale Student-t, truncated at zero by rejection.
    TLocationScale,
}

impl RateDistribution {
    pub const ALL: [RateDistribution; 4] = [
        RateDistribution::TruncNormal,
        RateDistribution::Gamma,
        RateDistribution::Uniform,
        RateDistribution::TLocationScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RateDistribution::TruncNormal => "trunc-normal",
            RateDistribution::Gamma => "gamma",
            RateDistribution::Uniform => "uniform",
            RateDistribution::TLocationScale => "t-location-scale",
        }
    }
}

/// Rate of one flow: a distribution with the given mean and coefficient of
/// variation (σ/μ), redrawn every bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub distribution: RateDistribution,
    pub mean_pps: f64,
    pub cov: f64,
}

enum Sampler {
    Constant(f64),
    Normal(Normal<f64>),
    Gamma(Gamma<f64>),
    Uniform(f64, f64),
    T {
        loc: f64,
        scale: f64,
        t: StudentT<f64>,
    },
}

impl Sampler {
    /// One draw before truncation at zero.
    fn draw_raw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::Normal(n) => n.sample(rng),
            Sampler::Gamma(g) => g.sample(rng),
            Sampler::Uniform(lo, hi) => rng.random_range(*lo..=*hi),
            Sampler::T { loc, scale, t } => loc + scale * t.sample(rng),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        loop {
            let x = self.draw_raw(rng);
            if x >= 0.0 {
                break x;
            }
        }
    }
}

impl RateModel {
    pub fn new(distribution: RateDistribution, mean_pps: f64, cov: f64) -> Self {
        Self {
            distribution,
            mean_pps,
            cov,
        }
    }

    pub fn std_pps(&self) -> f64 {
        self.mean_pps * self.cov
    }

    /// Uniform rates wider than ±mean would need a negative lower bound.
    pub fn needs_clamp(&self) -> bool {
        self.distribution == RateDistribution::Uniform && self.cov > 1.0 / 3f64.sqrt()
    }

    fn validate(&self) -> Result<()> {
        if !(self.mean_pps >= 0.0 && self.mean_pps.is_finite()) {
            return Err(invalid(
                "mean_pps",
                format!("{} must be non-negative", self.mean_pps),
            ));
        }
        if !(self.cov >= 0.0 && self.cov.is_finite()) {
            return Err(invalid("cov", format!("{} must be non-negative", self.cov)));
        }
        Ok(())
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        let (m, sd) = (self.mean_pps, self.std_pps());
        if sd == 0.0 || m == 0.0 {
            return Ok(Sampler::Constant(m));
        }
        let bad = |e: &dyn std::fmt::Display| invalid("rate model", e.to_string());
        Ok(match self.distribution {
            RateDistribution::TruncNormal => {
                Sampler::Normal(Normal::new(m, sd).map_err(|e| bad(&e))?)
            }
            RateDistribution::Gamma => {
                let shape = 1.0 / (self.cov * self.cov);
                Sampler::Gamma(Gamma::new(shape, m / shape).map_err(|e| bad(&e))?)
            }
            RateDistribution::Uniform => {
                if self.needs_clamp() {
                    Sampler::Uniform(0.0, 2.0 * m)
                } else {
                    let half = 3f64.sqrt() * sd;
                    Sampler::Uniform(m - half, m + half)
                }
            }
            RateDistribution::TLocationScale => {
                let nu = T_DEGREES_OF_FREEDOM;
                Sampler::T {
                    loc: m,
                    scale: sd * ((nu - 2.0) / nu).sqrt(),
                    t: StudentT::new(nu).map_err(|e| bad(&e))?,
                }
            }
        })
    }

    /// Mean and variance of the rates actually produced, after truncation at
    /// zero. Exact for normal, gamma and uniform. For the Student-t model the
    /// nominal moments are returned.
    pub fn realized_moments(&self) -> (f64, f64) {
        let (m, sd) = (self.mean_pps, self.std_pps());
        if sd == 0.0 || m == 0.0 {
            return (m, 0.0);
        }
        match self.distribution {
            RateDistribution::TruncNormal => {
                let a = -m / sd;
                let lambda = normal_pdf(a) / (1.0 - normal_cdf(a));
                let mean = m + sd * lambda;
                let var = sd * sd * (1.0 + a * lambda - lambda * lambda);
                (mean, var)
            }
            RateDistribution::Uniform if self.needs_clamp() => (m, m * m / 3.0),
            _ => (m, sd * sd),
        }
    }
}

/// Per-flow rate series on a common bucket grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProcess {
    bucket_s: f64,
    flow_ids: Vec<String>,
    series: Vec<Vec<f64>>,
    num_buckets: usize,
}

impl RateProcess {
    pub fn new(bucket_s: f64, flows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if !(bucket_s > 0.0) {
            return Err(invalid("bucket", "must be positive"));
        }
        let num_buckets = flows.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
        let mut flow_ids = Vec::with_capacity(flows.len());
        let mut series = Vec::with_capacity(flows.len());
        for (id, mut s) in flows {
            if let Some(r) = s.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
                return Err(invalid(
                    format!("rates[{id}]"),
                    format!("{r} is not a valid rate"),
                ));
            }
            s.resize(num_buckets, 0.0);
            flow_ids.push(id);
            series.push(s);
        }
        Ok(Self {
            bucket_s,
            flow_ids,
            series,
            num_buckets,
        })
    }

    pub fn bucket_s(&self) -> f64 {
        self.bucket_s
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn flow_ids(&self) -> &[String] {
        &self.flow_ids
    }

    pub fn series(&self, flow: usize) -> &[f64] {
        &self.series[flow]
    }

    pub fn series_of(&self, id: &str) -> Option<&[f64]> {
        self.flow_ids
            .iter()
            .position(|f| f == id)
            .map(|i| self.series[i].as_slice())
    }

    /// Rate of flow `flow` in `bucket`; zero past the end of the process.
    pub fn rate(&self, flow: usize, bucket: usize) -> f64 {
        self.series[flow].get(bucket).copied().unwrap_or(0.0)
    }

    /// Reorders the process to the flow order of `network`. Flows the process
    /// lacks get all-zero series. Flows unknown to the network are an error
    /// unless `allow_unknown`, in which case they are dropped.
    pub fn aligned_to(&self, network: &Network, allow_unknown: bool) -> Result<Self> {
        if !allow_unknown {
            if let Some(id) = self
                .flow_ids
                .iter()
                .find(|id| network.flow_idx(id).is_none())
            {
                return Err(Error::UnknownFlow(id.clone()));
            }
        }
        let index: HashMap<&str, usize> = self
            .flow_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let series = network
            .flows()
            .iter()
            .map(|f| match index.get(f.id.as_str()) {
                Some(&i) => self.series[i].clone(),
                None => vec![0.0; self.num_buckets],
            })
            .collect();
        Ok(Self {
            bucket_s: self.bucket_s,
            flow_ids: network.flows().iter().map(|f| f.id.clone()).collect(),
            series,
            num_buckets: self.num_buckets,
        })
    }

    /// Every rate divided by `divisor`.
    pub fn scaled(&self, divisor: f64) -> Result<Self> {
        if !(divisor > 0.0 && divisor.is_finite()) {
            return Err(invalid(
                "scale_divisor",
                format!("{divisor} must be positive"),
            ));
        }
        let mut out = self.clone();
        for s in &mut out.series {
            for r in s.iter_mut() {
                *r /= divisor;
            }
        }
        Ok(out)
    }

    /// Serializes in the trace format, skipping zero entries.
    pub fn to_trace_string(&self) -> String {
        let mut out = String::new();
        out.push_str(TRACE_HEADER);
        out.push_str("\n# bucket_start_ms, flow_id, rate_pps\n");
        // Integral bucket widths in ms keep the start offsets exact.
        let width_ms = (self.bucket_s * 1000.0).round() as u64;
        for b in 0..self.num_buckets {
            for (id, s) in self.flow_ids.iter().zip(&self.series) {
                if s[b] != 0.0 {
                    let _ = writeln!(out, "{}, {}, {}", b as u64 * width_ms, id, s[b]);
                }
            }
        }
        out
    }
}

/// Rates generated from models, with the flows whose uniform model had to be
/// clamped to keep rates non-negative.
#[derive(Debug, Clone)]
pub struct Generation {
    pub rates: RateProcess,
    pub clamped: Vec<String>,
}

/// Draws `num_buckets` rates per flow. Flow `i` uses its own ChaCha stream
/// of `seed`, so series do not depend on each other.
pub fn generate_rates(
    network: &Network,
    models: &[RateModel],
    num_buckets: usize,
    bucket_s: f64,
    seed: u64,
) -> Result<Generation> {
    if models.len() != network.num_flows() {
        return Err(invalid(
            "rate models",
            format!("{} models for {} flows", models.len(), network.num_flows()),
        ));
    }
    let mut flows = Vec::with_capacity(models.len());
    let mut clamped = Vec::new();
    for (i, (flow, model)) in network.flows().iter().zip(models).enumerate() {
        let sampler = model.sampler()?;
        if model.needs_clamp() {
            clamped.push(flow.id.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let series = (0..num_buckets).map(|_| sampler.draw(&mut rng)).collect();
        flows.push((flow.id.clone(), series));
    }
    Ok(Generation {
        rates: RateProcess::new(bucket_s, flows)?,
        clamped,
    })
}

/// Per-flow rate mixture for model-driven runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateMix {
    pub distribution: RateDistribution,
    /// Mean rates to pick from uniformly, in KB/s.
    pub mean_kbps: Vec<f64>,
    pub low_cov: f64,
    pub high_cov: f64,
    /// Probability that a flow gets `low_cov`.
    pub low_cov_probability: f64,
}

impl Default for RateMix {
    fn default() -> Self {
        Self {
            distribution: RateDistribution::TruncNormal,
            mean_kbps: vec![200.0, 300.0, 500.0],
            low_cov: 0.2,
            high_cov: 2.0,
            low_cov_probability: 0.3,
        }
    }
}

impl RateMix {
    /// One fixed mean and CoV for every flow.
    pub fn uniform(distribution: RateDistribution, mean_kbps: f64, cov: f64) -> Self {
        Self {
            distribution,
            mean_kbps: vec![mean_kbps],
            low_cov: cov,
            high_cov: cov,
            low_cov_probability: 1.0,
        }
    }

    /// Draws a model per flow, converting KB/s to packets/s.
    pub fn assign(
        &self,
        num_flows: usize,
        packet_size_bytes: f64,
        seed: u64,
    ) -> Result<Vec<RateModel>> {
        if self.mean_kbps.is_empty() {
            return Err(Error::Empty("mean_kbps"));
        }
        if !(packet_size_bytes > 0.0) {
            return Err(invalid("packet_size_bytes", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.low_cov_probability) {
            return Err(invalid("low_cov_probability", "must be in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..num_flows)
            .map(|_| {
                let kbps = self.mean_kbps[rng.random_range(0..self.mean_kbps.len())];
                let cov = if rng.random_bool(self.low_cov_probability) {
                    self.low_cov
                } else {
                    self.high_cov
                };
                RateModel::new(self.distribution, kbps * 1000.0 / packet_size_bytes, cov)
            })
            .collect())
    }
}

/// Model-driven traffic: per-flow models from `mix`, then `num_buckets`
/// draws per flow.
pub fn generate_model_driven(
    network: &Network,
    mix: &RateMix,
    packet_size_bytes: f64,
    num_buckets: usize,
    bucket_s: f64,
    seed: u64,
) -> Result<(Vec<RateModel>, Generation)> {
    let models = mix.assign(network.num_flows(), packet_size_bytes, seed)?;
    let generation = generate_rates(network, &models, num_buckets, bucket_s, seed ^ 0x9e37_79b9)?;
    Ok((models, generation))
}

/// Parses a trace, dividing every rate by `scale_divisor`. `bucket_s` is the
/// width of the trace's buckets; every start offset must be a multiple of it.
pub fn parse_trace(text: &str, scale_divisor: f64, bucket_s: f64) -> Result<RateProcess> {
    if !(scale_divisor > 0.0 && scale_divisor.is_finite()) {
        return Err(invalid(
            "scale_divisor",
            format!("{scale_divisor} must be positive"),
        ));
    }
    if !(bucket_s > 0.0) {
        return Err(invalid("bucket", "must be positive"));
    }
    let bucket_ms = bucket_s * 1000.0;
    let mut flows: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if !saw_header {
            if line != TRACE_HEADER {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected header `{TRACE_HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [start, id, rate] = fields[..] else {
            return Err(parse_err(format!(
                "expected 3 fields, found {}",
                fields.len()
            )));
        };
        let start: f64 = start
            .parse()
            .map_err(|_| parse_err(format!("bad bucket_start_ms `{start}`")))?;
        let rate: f64 = rate
            .parse()
            .map_err(|_| parse_err(format!("bad rate_pps `{rate}`")))?;
        if id.is_empty() {
            return Err(parse_err("empty flow_id".into()));
        }
        if !(start >= 0.0) || !(rate >= 0.0 && rate.is_finite()) {
            return Err(parse_err("negative or non-finite value".into()));
        }
        let idx = start / bucket_ms;
        if (idx - idx.round()).abs() > 1e-6 {
            return Err(parse_err(format!(
                "{start} ms is not on the {bucket_ms} ms grid"
            )));
        }
        let entry = flows.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            BTreeMap::new()
        });
        if entry
            .insert(idx.round() as usize, rate / scale_divisor)
            .is_some()
        {
            return Err(parse_err(format!(
                "duplicate entry for `{id}` at {start} ms"
            )));
        }
    }
    let series = order
        .into_iter()
        .map(|id| {
            let points = &flows[&id];
            let len = points.keys().next_back().map_or(0, |&b| b + 1);
            let mut s = vec![0.0; len];
            for (&b, &r) in points {
                s[b] = r;
            }
            (id, s)
        })
        .collect();
    RateProcess::new(bucket_s, series)
}

pub fn load_trace(
    path: impl AsRef<Path>,
    scale_divisor: f64,
    bucket_s: f64,
) -> Result<RateProcess> {
    parse_trace(&fs::read_to_string(path)?, scale_divisor, bucket_s)
}

/// Sample coefficient of variation of a series (unbiased variance).
pub fn sample_cov(series: &[f64]) -> Option<f64> {
    if series.len() < 2 {
        return None;
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt() / mean)
}
