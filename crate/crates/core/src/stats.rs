//! Standard-normal machinery, capacity-violation probabilities and the
//! windowed rate estimator.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Allocation, Network};

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail `P(Z > x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

// Acklam's rational approximation of the inverse normal CDF.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

fn tail_approx(q: f64) -> f64 {
    (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
        / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
}

fn acklam(p: f64) -> f64 {
    if p < P_LOW {
        tail_approx((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail_approx((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Inverse of [`normal_cdf`] for `p` in (0, 1).
pub fn normal_inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", format!("{p} is outside (0, 1)")));
    }
    let x = acklam(p);
    // One Newton step on the erf-based CDF.
    let err = normal_cdf(x) - p;
    Ok(x - err / normal_pdf(x))
}

/// `z_δ`: the (1 − δ)-quantile of the standard normal distribution.
pub fn normal_quantile(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("{delta} is outside (0, 1)")));
    }
    if delta == 0.5 {
        return Ok(0.0);
    }
    // Solve on the lower tail at δ to avoid forming 1 − δ.
    Ok(-normal_inv_cdf(delta)?)
}

/// Probability that the sampling load assigned to switch index `switch`
/// exceeds its capacity, under the normal approximation of the summed load.
pub fn switch_violation_probability(network: &Network, alloc: &Allocation, switch: usize) -> f64 {
    let (mut mean, mut var, mut any) = (0.0, 0.0, false);
    for f in alloc.flows_on(switch) {
        let l = network.load(f);
        mean += l.mu;
        var += l.variance();
        any = true;
    }
    let cap = network.capacity(switch);
    if !any {
        return if cap >= 0.0 { 0.0 } else { 1.0 };
    }
    if var == 0.0 {
        return if mean > cap { 1.0 } else { 0.0 };
    }
    normal_sf((cap - mean) / var.sqrt())
}

/// [`switch_violation_probability`] addressed by switch id.
pub fn violation_probability(network: &Network, alloc: &Allocation, switch: &str) -> Result<f64> {
    let s = network
        .switch_idx(switch)
        .ok_or_else(|| Error::UnknownSwitchId(switch.to_string()))?;
    Ok(switch_violation_probability(network, alloc, s))
}

/// Observed rates of one flow, keyed by a strictly increasing sample index
/// (an epoch number or a global bucket number).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateHistory {
    samples: Vec<(u64, f64)>,
}

impl RateHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let mut h = Self::new();
        for (i, r) in samples {
            h.push(i, r)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, index: u64, rate_pps: f64) -> Result<()> {
        if let Some(&(last, _)) = self.samples.last() {
            if index <= last {
                return Err(invalid(
                    "history.index",
                    format!("{index} does not follow {last}"),
                ));
            }
        }
        self.samples.push((index, rate_pps));
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[(u64, f64)] {
        &self.samples
    }

    /// Drops all but the newest `keep` samples.
    pub fn truncate_front(&mut self, keep: usize) {
        if self.samples.len() > keep {
            self.samples.drain(..self.samples.len() - keep);
        }
    }
}

/// Sample mean and unbiased sample variance over the newest `window`
/// observations. A single observation has variance 0.
pub fn estimate_flow_stats(history: &RateHistory, window: usize) -> Result<(f64, f64)> {
    if window == 0 {
        return Err(invalid("window", "must be positive"));
    }
    if history.is_empty() {
        return Err(Error::Empty("rate history"));
    }
    let s = history.samples();
    let tail = &s[s.len().saturating_sub(window)..];
    let n = tail.len() as f64;
    let mean = tail.iter().map(|&(_, r)| r).sum::<f64>() / n;
    if tail.len() < 2 {
        return Ok((mean, 0.0));
    }
    let var = tail.iter().map(|&(_, r)| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// `None` for an empty sample. NaNs are not expected.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, FlowSpec, SwitchSpec};

    /// Bisection on the CDF, used as an independent quantile oracle.
    fn bisect_upper_quantile(delta: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_sf(mid) > delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn oracle_values_are_frozen() {
        assert!((bisect_upper_quantile(0.05) - 1.644_854).abs() < 1e-6);
        assert!((bisect_upper_quantile(0.20) - 0.841_621).abs() < 1e-6);
    }

    #[test]
    fn quantile_matches_reference_points() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.05).unwrap() - 1.644_854).abs() < 1e-6);
        assert!((normal_quantile(0.20).unwrap() - 0.841_621).abs() < 1e-6);
    }

    #[test]
    fn quantile_tracks_bisection_oracle() {
        let mut delta = 1e-4;
        while delta < 0.999 {
            let z = normal_quantile(delta).unwrap();
            assert!(
                (z - bisect_upper_quantile(delta)).abs() < 1e-6,
                "delta={delta}"
            );
            assert!((normal_sf(z) - delta).abs() < 1e-6 * delta.max(1e-3));
            delta *= 1.37;
        }
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        for d in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(normal_quantile(d).is_err());
        }
    }

    #[test]
    fn quantile_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 1..=500 {
            let z = normal_quantile(i as f64 / 1000.0).unwrap();
            assert!(z < prev);
            prev = z;
        }
    }

    fn two_switch() -> Network {
        let switches = vec![SwitchSpec::new("S1", 3.0), SwitchSpec::new("S2", 3.0)];
        let flows = vec![
            FlowSpec::on_path("f1", &["S1", "S2"], 0.1, 5.0, 100.0),
            FlowSpec::on_path("f2", &["S1", "S2"], 0.1, 5.0, 100.0),
            FlowSpec::on_path("f3", &["S1", "S2"], 0.1, 14.0, 1.0),
            FlowSpec::on_path("f4", &["S1", "S2"], 0.1, 14.0, 1.0),
        ];
        build_network(switches, flows).unwrap()
    }

    #[test]
    fn two_switch_violation_probabilities() {
        let net = two_switch();
        let det = Allocation::from_indices(&net, vec![Some(0), Some(1), Some(0), Some(1)]).unwrap();
        let p = violation_probability(&net, &det, "S1").unwrap();
        assert!((p - 0.137).abs() < 5e-4, "{p}");
        assert!((p - violation_probability(&net, &det, "S2").unwrap()).abs() < 1e-15);

        let var = Allocation::from_indices(&net, vec![Some(0), Some(0), Some(1), Some(1)]).unwrap();
        let p1 = violation_probability(&net, &var, "S1").unwrap();
        let p2 = violation_probability(&net, &var, "S2").unwrap();
        assert!((p1 - 0.079).abs() < 5e-4, "{p1}");
        assert!((p2 - 0.079).abs() < 5e-3, "{p2}");

        let empty = Allocation::empty(4);
        assert_eq!(violation_probability(&net, &empty, "S1").unwrap(), 0.0);
        assert!(violation_probability(&net, &empty, "S9").is_err());
    }

    #[test]
    fn zero_variance_is_a_step() {
        let net = build_network(
            vec![SwitchSpec::new("S", 1.0)],
            vec![FlowSpec::on_path("f", &["S"], 1.0, 2.0, 0.0)],
        )
        .unwrap();
        let a = Allocation::from_indices(&net, vec![Some(0)]).unwrap();
        assert_eq!(violation_probability(&net, &a, "S").unwrap(), 1.0);
    }

    #[test]
    fn estimator_examples() {
        let h = RateHistory::from_samples([(1, 100.0), (2, 100.0), (3, 100.0)]).unwrap();
        assert_eq!(estimate_flow_stats(&h, 3).unwrap(), (100.0, 0.0));

        let h = RateHistory::from_samples([(1, 90.0), (2, 110.0)]).unwrap();
        assert_eq!(estimate_flow_stats(&h, 2).unwrap(), (100.0, 200.0));

        let h = RateHistory::from_samples([(1, 50.0), (2, 90.0), (3, 110.0)]).unwrap();
        assert_eq!(estimate_flow_stats(&h, 2).unwrap(), (100.0, 200.0));

        let h = RateHistory::from_samples([(4, 70.0)]).unwrap();
        assert_eq!(estimate_flow_stats(&h, 5).unwrap(), (70.0, 0.0));
    }

    #[test]
    fn estimator_errors() {
        assert!(matches!(
            estimate_flow_stats(&RateHistory::new(), 3),
            Err(Error::Empty(_))
        ));
        let h = RateHistory::from_samples([(1, 1.0)]).unwrap();
        assert!(estimate_flow_stats(&h, 0).is_err());
        assert!(RateHistory::from_samples([(2, 1.0), (2, 1.0)]).is_err());
        assert!(RateHistory::from_samples([(2, 1.0), (1, 1.0)]).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        let q = Quartiles::of(&[1.0, 2.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.25, 1.5, 1.75));
        assert!(Quartiles::of(&[]).is_none());
    }
}
