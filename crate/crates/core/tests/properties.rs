mod common;

use flowsamp::optimizer::{additive_feasible, effective_loads};
use flowsamp::stats::normal_cdf;
use flowsamp::trafficgen::{
    generate_rates, parse_trace, sample_cov, RateDistribution, RateModel, TRACE_HEADER,
};
use flowsamp::{
    brute_force_optimal, build_ilp_model, load_stats, measure_metrics, normal_quantile,
    run_simulation, socp_feasible, solve, violation_probability, Allocation, EpochConfig,
    Formulation, Network, Planner, SamplingQuery, SolverConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn net_from(seed: u64, flows: usize, switches: usize, zero_variance: bool) -> Network {
    common::random_network(
        &mut ChaCha8Rng::seed_from_u64(seed),
        flows,
        switches,
        zero_variance,
    )
}

fn delta_strategy() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.01, 0.05, 0.1, 0.2, 0.35, 0.5])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn incidence_is_a_transpose(seed in any::<u64>()) {
        let net = net_from(seed, 12, 6, false);
        for f in 0..net.num_flows() {
            for s in 0..net.num_switches() {
                prop_assert_eq!(net.path(f).contains(&s), net.flows_through(s).contains(&f));
                prop_assert_eq!(net.on_path(f, s), net.path(f).contains(&s));
            }
        }
    }

    #[test]
    fn load_scales_linearly_with_target_rate(alpha in 0.001f64..0.5, mean in 0.0f64..1e6, var in 0.0f64..1e10) {
        let one = flowsamp::FlowSpec::on_path("f", &["S"], alpha, mean, var);
        let two = flowsamp::FlowSpec { target_rate: 2.0 * alpha, ..one.clone() };
        let (a, b) = (load_stats(&one), load_stats(&two));
        prop_assert_eq!(b.mu, 2.0 * a.mu);
        prop_assert_eq!(b.sigma, 2.0 * a.sigma);
    }

    #[test]
    fn off_path_assignments_rejected(seed in any::<u64>()) {
        let net = net_from(seed, 8, 5, false);
        for f in 0..net.num_flows() {
            for s in 0..net.num_switches() {
                let mut assign = vec![None; net.num_flows()];
                assign[f] = Some(s);
                prop_assert_eq!(Allocation::from_indices(&net, assign).is_ok(), net.on_path(f, s));
            }
        }
    }

    #[test]
    fn quantile_inverts_cdf(delta in 1e-4f64..=0.5) {
        let z = normal_quantile(delta).unwrap();
        prop_assert!((normal_cdf(-z) - delta).abs() <= 1e-6);
    }

    #[test]
    fn violation_monotone_in_assignment(seed in any::<u64>()) {
        let net = net_from(seed, 8, 3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let s = rng.random_range(0..net.num_switches());
        let sid = net.switches()[s].id.clone();
        let mut alloc = Allocation::empty(net.num_flows());
        let mut last = violation_probability(&net, &alloc, &sid).unwrap();
        let mut mean_load = 0.0;
        for &f in net.flows_through(s) {
            let within_mean_budget = mean_load <= net.capacity(s);
            alloc.assign(&net, f, Some(s)).unwrap();
            mean_load += net.load(f).mu;
            let p = violation_probability(&net, &alloc, &sid).unwrap();
            if within_mean_budget {
                prop_assert!(p >= last - 1e-15, "{} then {}", last, p);
            }
            last = p;
        }
    }

    #[test]
    fn apx_allocations_are_cone_feasible(seed in any::<u64>(), delta in delta_strategy()) {
        let net = net_from(seed, 5, 3, false);
        let cfg = SolverConfig::new(Formulation::Apx, delta);
        let weights = effective_loads(&net, &cfg).unwrap();
        for alloc in common::all_allocations(&net) {
            if additive_feasible(&net, &alloc, &weights) {
                prop_assert!(socp_feasible(&net, &alloc, delta));
            }
        }
        let res = solve(&net, &cfg).unwrap();
        prop_assert!(socp_feasible(&net, &res.allocation, delta));
    }

    #[test]
    fn search_matches_enumeration(seed in any::<u64>(), delta in delta_strategy(), form in prop::sample::select(Formulation::ALL.to_vec())) {
        let net = net_from(seed, 6, 3, false);
        let cfg = SolverConfig::new(form, delta).with_epsilon(20.0);
        let fast = solve(&net, &cfg).unwrap();
        let slow = brute_force_optimal(&net, &cfg).unwrap();
        prop_assert!(fast.optimal);
        prop_assert_eq!(fast.objective, slow.objective);
        prop_assert_eq!(fast.objective, fast.allocation.assigned_count());
    }

    #[test]
    fn exact_dominates_apx(seed in any::<u64>(), delta in delta_strategy()) {
        let net = net_from(seed, 9, 4, false);
        let apx = solve(&net, &SolverConfig::new(Formulation::Apx, delta)).unwrap();
        let exact = solve(&net, &SolverConfig::new(Formulation::Exact, delta)).unwrap();
        if apx.optimal && exact.optimal {
            prop_assert!(exact.objective >= apx.objective);
        }
    }

    #[test]
    fn linearization_equivalence(seed in any::<u64>(), delta in delta_strategy()) {
        let net = net_from(seed, 4, 2, false);
        let z = normal_quantile(delta).unwrap();
        let ilp = build_ilp_model(&net);
        for alloc in common::all_allocations(&net) {
            let w = ilp.derive_w(&alloc);
            prop_assert_eq!(ilp.satisfies(&net, &alloc, &w, z), socp_feasible(&net, &alloc, delta));
        }
    }

    #[test]
    fn ilp_size_bound(seed in any::<u64>()) {
        let net = net_from(seed, 15, 6, false);
        let ilp = build_ilp_model(&net);
        let (f, s) = (net.num_flows(), net.num_switches());
        prop_assert!(ilp.w_vars.len() <= f * f * s);
        prop_assert!(ilp.x_vars.len() <= f * s);
    }

    #[test]
    fn zero_variance_formulations_agree(seed in any::<u64>(), delta in delta_strategy()) {
        let net = net_from(seed, 9, 4, true);
        let objs: Vec<usize> = [Formulation::Apx, Formulation::Ds, Formulation::Ds2Sigma, Formulation::Exact]
            .iter()
            .map(|&f| solve(&net, &SolverConfig::new(f, delta)).unwrap().objective)
            .collect();
        prop_assert!(objs.windows(2).all(|w| w[0] == w[1]), "{:?}", objs);
    }

    #[test]
    fn solving_is_deterministic(seed in any::<u64>(), form in prop::sample::select(Formulation::ALL.to_vec())) {
        let net = net_from(seed, 12, 5, false);
        let cfg = SolverConfig::new(form, 0.2).with_epsilon(10.0);
        let a = solve(&net, &cfg).unwrap();
        let b = solve(&net, &cfg).unwrap();
        prop_assert_eq!(a.allocation, b.allocation);
        prop_assert_eq!(a.nodes_explored, b.nodes_explored);
    }

    #[test]
    fn trace_scaling_preserves_cov(rates in prop::collection::vec(0.0f64..1e6, 2..60), divisor in 1e-3f64..1e4) {
        let mut text = format!("{TRACE_HEADER}\n");
        for (b, r) in rates.iter().enumerate() {
            text.push_str(&format!("{}, f, {r}\n", b * 100));
        }
        let raw = parse_trace(&text, 1.0, 0.1).unwrap();
        let scaled = parse_trace(&text, divisor, 0.1).unwrap();
        match (sample_cov(raw.series(0)), sample_cov(scaled.series(0))) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn violation_probability_matches_monte_carlo(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(10..25);
        let flows: Vec<_> = (0..n)
            .map(|i| {
                let mean = rng.random_range(100.0..1000.0);
                let sd = mean * rng.random_range(0.05..0.5);
                flowsamp::FlowSpec::on_path(format!("f{i}"), &["S"], 0.1, mean, sd * sd)
            })
            .collect();
        let (mu, var): (f64, f64) = flows.iter().map(load_stats).fold((0.0, 0.0), |(m, v), l| (m + l.mu, v + l.variance()));
        // Capacity between the mean and two standard deviations above it.
        let cap = mu + rng.random_range(0.0..2.0) * var.sqrt();
        let net = flowsamp::build_network(vec![flowsamp::SwitchSpec::new("S", cap)], flows).unwrap();
        let alloc = Allocation::from_indices(&net, vec![Some(0); n]).unwrap();
        let p = violation_probability(&net, &alloc, "S").unwrap();
        let dists: Vec<Normal<f64>> = net.loads().iter().map(|l| Normal::new(l.mu, l.sigma).unwrap()).collect();
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| dists.iter().map(|d| d.sample(&mut rng)).sum::<f64>() > cap)
            .count();
        let freq = hits as f64 / draws as f64;
        prop_assert!((p - freq).abs() <= 0.01, "analytic {} vs empirical {}", p, freq);
    }

    #[test]
    fn generation_is_a_function_of_seed(seed in any::<u64>(), cov in 0.0f64..3.0) {
        let net = net_from(seed, 6, 2, false);
        let models: Vec<RateModel> = RateDistribution::ALL
            .iter()
            .cycle()
            .take(net.num_flows())
            .map(|&d| RateModel::new(d, 100.0, cov))
            .collect();
        let a = generate_rates(&net, &models, 40, 0.1, seed).unwrap();
        let b = generate_rates(&net, &models, 40, 0.1, seed).unwrap();
        prop_assert_eq!(&a.rates, &b.rates);
        for f in 0..net.num_flows() {
            prop_assert!(a.rates.series(f).iter().all(|&r| r >= 0.0 && r.is_finite()));
        }
    }

    #[test]
    fn simulation_conserves_packets(seed in any::<u64>(), form in prop::sample::select(Formulation::ALL.to_vec())) {
        let net = net_from(seed, 8, 3, false);
        let models: Vec<RateModel> = net
            .flows()
            .iter()
            .map(|f| RateModel::new(RateDistribution::TruncNormal, f.rate_mean_pps, f.rate_var_pps2.sqrt() / f.rate_mean_pps))
            .collect();
        let rates = generate_rates(&net, &models, 60, 0.1, seed).unwrap().rates;
        let queries: Vec<SamplingQuery> = net
            .flows()
            .iter()
            .map(|f| SamplingQuery::new(f.id.clone(), 0.0, 3.0, f.target_rate))
            .collect();
        let cfg = EpochConfig {
            epoch_length_s: 1.0,
            ..EpochConfig::new(Planner::Solve(SolverConfig::new(form, 0.2)))
        };
        let a = run_simulation(&net, &queries, &rates, &cfg, seed).unwrap();
        for rows in &a.flow_epochs {
            for r in rows {
                prop_assert!(r.offered >= r.sampled);
                prop_assert_eq!(r.sampled, r.forwarded + r.dropped);
            }
        }
        for s in 0..net.num_switches() {
            for b in 0..a.num_buckets() {
                prop_assert!(a.forwarded_at(s, b) <= a.bucket_capacity[s]);
            }
        }
        let b = run_simulation(&net, &queries, &rates, &cfg, seed).unwrap();
        prop_assert_eq!(&a.flow_epochs, &b.flow_epochs);
        prop_assert_eq!(&a.switch_sampled, &b.switch_sampled);
        let s = measure_metrics(&a);
        prop_assert!(s.fully_sampled_flows <= s.admitted_flows);
    }
}

/// Past the mean budget the normal tail can shrink: a high-variance flow
/// pulls `(B - Σμ)/√V` from below towards zero.
#[test]
fn violation_can_drop_once_mean_exceeds_capacity() {
    let flows = vec![
        flowsamp::FlowSpec::on_path("heavy", &["S"], 1.0, 20.0, 1.0),
        flowsamp::FlowSpec::on_path("bursty", &["S"], 1.0, 0.1, 400.0),
    ];
    let net = flowsamp::build_network(vec![flowsamp::SwitchSpec::new("S", 10.0)], flows).unwrap();
    let one = Allocation::from_indices(&net, vec![Some(0), None]).unwrap();
    let two = Allocation::from_indices(&net, vec![Some(0), Some(0)]).unwrap();
    let p1 = violation_probability(&net, &one, "S").unwrap();
    let p2 = violation_probability(&net, &two, "S").unwrap();
    assert!(p1 > 0.999 && p2 < 0.8, "{p1} {p2}");
}
