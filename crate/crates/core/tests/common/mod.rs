#![allow(dead_code)]

use flowsamp::{build_network, Allocation, FlowSpec, Network, SwitchSpec};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random instance with 1..=`max_flows` flows over 1..=`max_switches`
/// switches. Paths are random non-empty ordered switch subsets.
pub fn random_network<R: Rng>(
    rng: &mut R,
    max_flows: usize,
    max_switches: usize,
    zero_variance: bool,
) -> Network {
    let ns = rng.random_range(1..=max_switches);
    let nf = rng.random_range(1..=max_flows);
    let switches: Vec<SwitchSpec> = (0..ns)
        .map(|s| SwitchSpec::new(format!("S{s}"), rng.random_range(5.0..60.0)))
        .collect();
    let flows = (0..nf)
        .map(|f| {
            let mut ids: Vec<usize> = (0..ns).collect();
            ids.shuffle(rng);
            ids.truncate(rng.random_range(1..=ns));
            let path: Vec<String> = ids.iter().map(|s| format!("S{s}")).collect();
            let mean = rng.random_range(10.0..200.0);
            let var = if zero_variance {
                0.0
            } else {
                (mean * rng.random_range(0.0..2.0f64)).powi(2)
            };
            FlowSpec {
                id: format!("f{f}"),
                src: path[0].clone(),
                dst: path[path.len() - 1].clone(),
                path,
                target_rate: rng.random_range(0.05..0.5),
                rate_mean_pps: mean,
                rate_var_pps2: var,
            }
        })
        .collect();
    build_network(switches, flows).unwrap()
}

/// Every allocation of the network, each flow unassigned or on one of its
/// path switches.
pub fn all_allocations(net: &Network) -> Vec<Allocation> {
    let mut out = Vec::new();
    let mut digits = vec![0usize; net.num_flows()];
    loop {
        let assign = digits
            .iter()
            .enumerate()
            .map(|(f, &d)| (d > 0).then(|| net.path(f)[d - 1]))
            .collect();
        out.push(Allocation::from_indices(net, assign).unwrap());
        let mut i = 0;
        loop {
            if i == digits.len() {
                return out;
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
