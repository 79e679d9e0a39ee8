use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flowsamp::{
    compare, socp_feasible, solve, sweep, Aggregate, Algorithm, Formulation, Network, Overrides,
    Scenario, SolveReport, SolverConfig,
};

mod table;

#[derive(Parser)]
#[command(
    name = "flowsamp",
    version,
    about = "Coordinated flow-sampling allocation and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one allocation instance and write its report.
    Solve(SolveArgs),
    /// Re-load a solve report against its network and re-check it.
    Check(CheckArgs),
    /// Run the epoch simulator for a scenario.
    Simulate(SimulateArgs),
    /// Run several algorithms over the same scenario and seeds.
    Compare(CompareArgs),
    /// List the built-in scenario presets.
    Presets,
}

#[derive(Args, Default)]
struct Source {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Default)]
struct ScenarioFlags {
    /// Network JSON file.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Rate trace file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// apx, exact, ds, ds2sigma or csamp.
    #[arg(long)]
    formulation: Option<Formulation>,
    /// Per-switch violation probability, in (0, 0.5].
    #[arg(long)]
    delta: Option<f64>,
    /// cS+ε headroom in packets per second.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Target sampling rate applied to every flow.
    #[arg(long)]
    alpha: Option<f64>,
    /// Epoch length in seconds.
    #[arg(long = "epoch-len")]
    epoch_len: Option<f64>,
    /// Bucket length in seconds.
    #[arg(long)]
    bucket: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-solve wall-clock limit in seconds.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
}

impl ScenarioFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            net: self.net.clone(),
            trace: self.trace.clone(),
            formulation: self.formulation,
            delta: self.delta,
            epsilon_pps: self.epsilon,
            alpha: self.alpha,
            epoch_length_s: self.epoch_len,
            bucket_s: self.bucket,
            seed: self.seed,
            time_limit_s: self.time_limit,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    flags: ScenarioFlags,
    /// Branch-and-bound node budget.
    #[arg(long = "node-limit")]
    node_limit: Option<u64>,
    /// Where to write the report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    flags: ScenarioFlags,
    /// Output directory for CSV and JSON files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    flags: ScenarioFlags,
    /// Comma-separated algorithms, e.g. apx,ds,cs+100.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Where to write the comparison JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NO_INCUMBENT: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|e| e.is::<flowsamp::Error>()) {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Solve(a) => cmd_solve(a),
        Command::Check(a) => cmd_check(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Presets => {
            for name in flowsamp::scenario::preset_names() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_scenario(source: &Source, flags: &ScenarioFlags) -> Result<Scenario> {
    let mut scenario = match (&source.config, &source.preset) {
        (Some(path), _) => {
            Scenario::from_path(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(name)) => Scenario::preset(name)?,
        (None, None) => Scenario::default(),
    };
    for flag in shadowed(&scenario, flags) {
        eprintln!("note: --{flag} ignored, the configuration sets it");
    }
    scenario.apply(&flags.overrides());
    Ok(scenario)
}

fn shadowed(s: &Scenario, f: &ScenarioFlags) -> Vec<&'static str> {
    [
        ("net", f.net.is_some() && s.network.path.is_some()),
        ("trace", f.trace.is_some() && s.traffic.trace.is_some()),
        (
            "formulation",
            f.formulation.is_some() && s.solver.formulation.is_some(),
        ),
        ("delta", f.delta.is_some() && s.solver.delta.is_some()),
        (
            "epsilon",
            f.epsilon.is_some() && s.solver.epsilon_pps.is_some(),
        ),
        ("alpha", f.alpha.is_some() && s.flows.target_rate.is_some()),
        (
            "epoch-len",
            f.epoch_len.is_some() && s.epoch.length_s.is_some(),
        ),
        ("bucket", f.bucket.is_some() && s.epoch.bucket_s.is_some()),
        ("seed", f.seed.is_some() && s.run.seeds.is_some()),
        (
            "time-limit",
            f.time_limit.is_some() && s.solver.time_limit_s.is_some(),
        ),
    ]
    .into_iter()
    .filter_map(|(name, hit)| hit.then_some(name))
    .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_solve(a: SolveArgs) -> Result<ExitCode> {
    let mut scenario = load_scenario(&a.source, &a.flags)?;
    if scenario.solver.node_limit.is_none() {
        scenario.solver.node_limit = a.node_limit;
    }
    let network = match (&scenario.network.kind, &scenario.network.path) {
        (Some(flowsamp::scenario::NetworkKind::File) | None, Some(path)) => {
            let path = match &scenario.base_dir {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path.clone(),
            };
            Network::from_path(&path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, None) => bail!(flowsamp::Error::Config(
            "solve needs --net, --config or --preset".into()
        )),
        _ => scenario.instance(scenario.seeds()[0])?.network,
    };
    let config: SolverConfig = scenario.solver_config(None)?;
    let result = solve(&network, &config)?;
    println!("objective: {}", result.objective);
    println!("optimal: {}", result.optimal);
    println!("nodes: {}", result.nodes_explored);
    println!("wall_time_s: {:.6}", result.wall_time.as_secs_f64());
    if let Some(out) = &a.out {
        write_json(out, &SolveReport::new(&network, &config, &result))?;
    }
    if !result.optimal && result.objective == 0 && network.num_flows() > 0 {
        eprintln!("solver limit reached without a feasible incumbent");
        return Ok(ExitCode::from(EXIT_NO_INCUMBENT));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(a: CheckArgs) -> Result<ExitCode> {
    let network =
        Network::from_path(&a.net).with_context(|| format!("reading {}", a.net.display()))?;
    let text =
        fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report: SolveReport = serde_json::from_str(&text).map_err(flowsamp::Error::from)?;
    let result = report.to_result(&network)?;
    let config = SolverConfig::new(report.formulation, report.delta);
    config.validate()?;
    println!("objective: {}", result.objective);
    if matches!(report.formulation, Formulation::Apx | Formulation::Exact) {
        let ok = socp_feasible(&network, &result.allocation, report.delta);
        println!("chance constraints hold: {ok}");
        if !ok {
            return Ok(ExitCode::from(EXIT_VALIDATION));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(a: SimulateArgs) -> Result<ExitCode> {
    let scenario = load_scenario(&a.source, &a.flags)?;
    let seeds = scenario.seeds();
    if scenario.sweep.is_some() {
        let rows = sweep(&scenario, &seeds)?;
        print!("{}", table::sweep(&rows));
        if let Some(out) = &a.out {
            write_json(&out.join("sweep.json"), &rows)?;
        }
        return Ok(ExitCode::SUCCESS);
    }
    let algorithm = scenario.algorithms()?[0];
    let mut summaries = Vec::new();
    for &seed in &seeds {
        let run = scenario.run(&algorithm, seed)?;
        if !run.clamped.is_empty() {
            eprintln!(
                "seed {seed}: {} uniform rate models clamped at zero",
                run.clamped.len()
            );
        }
        if let Some(out) = &a.out {
            let dir = if seeds.len() == 1 {
                out.clone()
            } else {
                out.join(format!("seed-{seed}"))
            };
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            run.report
                .write_flow_csv(BufWriter::new(File::create(dir.join("flows.csv"))?))?;
            run.report
                .write_switch_csv(BufWriter::new(File::create(dir.join("switches.csv"))?))?;
            write_json(&dir.join("summary.json"), &run.summary)?;
        }
        summaries.push((seed, run.summary));
    }
    print!("{}", table::simulation(&algorithm, &summaries));
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(a: CompareArgs) -> Result<ExitCode> {
    let mut scenario = load_scenario(&a.source, &a.flags)?;
    if !a.algorithms.is_empty() {
        match scenario.run.algorithms {
            Some(_) => eprintln!("note: --algorithms ignored, the configuration sets it"),
            None => scenario.run.algorithms = Some(a.algorithms.clone()),
        }
    }
    if !a.seeds.is_empty() {
        match scenario.run.seeds {
            Some(_) => eprintln!("note: --seeds ignored, the configuration sets it"),
            None => scenario.run.seeds = Some(a.seeds.clone()),
        }
    }
    let algorithms: Vec<Algorithm> = scenario.algorithms()?;
    let seeds = scenario.seeds();
    let rows: Vec<Aggregate> = compare(&scenario, &algorithms, &seeds)?;
    print!("{}", table::comparison(&rows));
    if let Some(out) = &a.out {
        write_json(out, &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}
