//! Benchmark workloads.

use flowsamp::topology::Topology;
use flowsamp::{build_network, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scale-free network with `flows` random node pairs drawn from the
/// default rate mixture, every switch at `capacity_pps`.
pub fn scale_free_instance(nodes: usize, flows: usize, capacity_pps: f64, seed: u64) -> Network {
    let topo = Topology::scale_free(nodes, 2, seed);
    let mut router = topo.router();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(flows);
    while specs.len() < flows {
        let (a, b) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if a == b {
            continue;
        }
        let mean = [200.0, 300.0, 500.0][rng.random_range(0..3)];
        let cov: f64 = if rng.random_bool(0.3) { 0.2 } else { 2.0 };
        let id = format!("f{}", specs.len());
        specs.extend(router.flow(id, a, b, 0.1, mean, (cov * mean).powi(2)));
    }
    build_network(topo.switches(capacity_pps), specs).expect("routed flows are valid")
}
