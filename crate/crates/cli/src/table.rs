use std::fmt::Write;

use flowsamp::{Aggregate, Algorithm, Quartiles, SimSummary};

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn quartiles(q: &Option<Quartiles>, digits: usize) -> [String; 3] {
    match q {
        Some(q) => [q.q1, q.median, q.q3].map(|x| format!("{x:.digits$}")),
        None => ["-".into(), "-".into(), "-".into()],
    }
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &mut rule.iter().map(String::as_str));
    for row in rows {
        line(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

pub fn comparison(rows: &[Aggregate]) -> String {
    let header = [
        "algorithm",
        "runs",
        "requested",
        "admitted",
        "fully_sampled",
        "rate_q1",
        "rate_median",
        "rate_q3",
        "viol_freq",
        "solver_ms",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let [q1, med, q3] = quartiles(&r.measured_rate, 4);
            vec![
                r.label.clone(),
                r.runs.to_string(),
                r.requested.to_string(),
                r.admitted.to_string(),
                r.fully_sampled.to_string(),
                q1,
                med,
                q3,
                opt(r.violation_frequency, 4),
                format!("{:.3}", r.mean_solver_wall_s * 1e3),
            ]
        })
        .collect();
    render(&header, &body)
}

pub fn sweep(rows: &[Aggregate]) -> String {
    let header = [
        "variant",
        "runs",
        "admitted",
        "fully_sampled",
        "mean_rate",
        "rate_median",
        "load_q1",
        "load_median",
        "load_q3",
        "viol_freq",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let [_, med, _] = quartiles(&r.measured_rate, 4);
            let [l1, lm, l3] = quartiles(&r.switch_load_pps, 1);
            vec![
                r.label.clone(),
                r.runs.to_string(),
                r.admitted.to_string(),
                r.fully_sampled.to_string(),
                opt(r.mean_measured_rate, 4),
                med,
                l1,
                lm,
                l3,
                opt(r.violation_frequency, 4),
            ]
        })
        .collect();
    render(&header, &body)
}

pub fn simulation(algorithm: &Algorithm, runs: &[(u64, SimSummary)]) -> String {
    let header = [
        "seed",
        "epochs",
        "requested",
        "admitted",
        "fully_sampled",
        "mean_rate",
        "viol_freq",
        "dropped",
        "solver_ms",
    ];
    let body: Vec<Vec<String>> = runs
        .iter()
        .map(|(seed, s)| {
            vec![
                seed.to_string(),
                s.epochs.to_string(),
                s.requested_flows.to_string(),
                s.admitted_flows.to_string(),
                s.fully_sampled_flows.to_string(),
                opt(s.mean_measured_rate, 4),
                opt(s.violation_frequency, 4),
                s.dropped.to_string(),
                format!("{:.3}", s.mean_solver_wall_s * 1e3),
            ]
        })
        .collect();
    format!("algorithm: {algorithm}\n{}", render(&header, &body))
}
