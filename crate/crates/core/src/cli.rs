//! Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::checks::{oracle_agreement, recursive_feasibility};
use crate::conic::{check_relaxation_exactness, GAP_TOL};
use crate::controller::{solve_stage1, ControllerConfig, ControllerContext};
use crate::error::{Error, Result};
use crate::network::{validate_topology, NetworkData, NetworkModel};
use crate::pnp::write_decision_log;
use crate::scenario::{gen_scenario, GenParams, Scenario};
use crate::simulator::{export_trace, run, uncontrolled_baseline, SimulationOptions};

#[derive(Debug, Parser)]
#[command(name = "gridshaper", version, about = "Plug-and-play predictive control of flexible loads on radial feeders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check network, scenario and controller files.
    Validate(ValidateArgs),
    /// Run the closed loop over a scenario and export the trace.
    Run(RunArgs),
    /// Peak demand when every load draws at its nominal rate on arrival.
    Baseline(BaselineArgs),
    /// Compare the relaxed flow with the exact sweep and report cone gaps.
    CheckRelaxation(RelaxationArgs),
    /// Run many generated scenarios and count stage-2 infeasibilities.
    CheckRecursiveFeasibility(FeasibilityArgs),
    /// Write a random request schedule.
    GenScenario(GenArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Defaults to the network named in the scenario file.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario length.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also check the shifted candidate at every step.
    #[arg(long)]
    pub check_candidates: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RelaxationArgs {
    /// Also solve the stage-1 reference on this network and report its gaps.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random feeders.
    #[arg(long, default_value_t = 20)]
    pub count: u64,
    #[arg(long, default_value_t = 10)]
    pub max_buses: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeasibilityArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 1.0)]
    pub intensity: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub intensity: Option<f64>,
    /// Restrict arrivals to the battery buses of this network.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Full generator parameters as JSON; flags override individual fields.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

/// Parses `argv` and runs the command, printing a summary to stdout.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Validate(a) => validate(a),
        Command::Run(a) => run_cmd(a),
        Command::Baseline(a) => baseline(a),
        Command::CheckRelaxation(a) => check_relaxation(a),
        Command::CheckRecursiveFeasibility(a) => check_feasibility(a),
        Command::GenScenario(a) => gen(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<(ControllerConfig, Option<PathBuf>)> {
    match path {
        Some(p) => Ok((ControllerConfig::from_path(p)?, p.parent().map(Path::to_path_buf))),
        None => Ok((ControllerConfig::default(), None)),
    }
}

struct Loaded {
    model: NetworkModel,
    ctx: ControllerContext,
    scenario: Scenario,
}

/// Resolves the network and config from flags, falling back to the paths named in
/// the scenario (relative to the scenario file).
fn load_run_inputs(network: Option<&Path>, scenario: &Path, config: Option<&Path>) -> Result<Loaded> {
    let sc = Scenario::from_path(scenario)?;
    let dir = scenario.parent().unwrap_or(Path::new("."));
    let net_path = match (network, &sc.network) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => dir.join(p),
        (None, None) => return Err(Error::Config("no network given and the scenario names none".into())),
    };
    let cfg_path = config.map(Path::to_path_buf).or_else(|| sc.config.as_ref().map(|p| dir.join(p)));
    let model = NetworkModel::from_path(&net_path)?;
    let (cfg, base) = load_config(cfg_path.as_deref())?;
    let ctx = ControllerContext::new(&model, &cfg, base.as_deref())?;
    Ok(Loaded { model, ctx, scenario: sc })
}

fn validate(a: ValidateArgs) -> Result<i32> {
    let data = NetworkData::from_path(&a.network)?;
    let violations = validate_topology(&data);
    if !violations.is_empty() {
        println!("{}: {} problem(s)", a.network.display(), violations.len());
        for v in &violations {
            println!("  {v}");
        }
        return Ok(1);
    }
    let model = NetworkModel::new(data)?;
    println!(
        "{}: ok ({} buses, {} batteries, {} capacitors, {} forecast steps)",
        a.network.display(),
        model.n_buses(),
        model.batteries().len(),
        model.capacitor_buses().len(),
        model.forecast_len()
    );
    let mut code = 0;
    if let Some(c) = &a.config {
        let (cfg, base) = load_config(Some(c))?;
        ControllerContext::new(&model, &cfg, base.as_deref())?;
        println!("{}: ok", c.display());
    }
    if let Some(s) = &a.scenario {
        let sc = Scenario::from_path(s)?;
        let problems = sc.validate(&model);
        if problems.is_empty() {
            println!("{}: ok ({} requests over {} steps)", s.display(), sc.requests.len(), sc.steps);
        } else {
            println!("{}: {} problem(s)", s.display(), problems.len());
            for p in problems {
                println!("  {p}");
            }
            code = 1;
        }
    }
    Ok(code)
}

fn run_cmd(a: RunArgs) -> Result<i32> {
    let Loaded { model, ctx, mut scenario } =
        load_run_inputs(a.network.as_deref(), &a.scenario, a.config.as_deref())?;
    if let Some(steps) = a.steps {
        scenario.steps = steps;
        scenario.requests.retain(|r| r.step < steps);
    }
    let started = Instant::now();
    let options = SimulationOptions {
        check_candidates: a.check_candidates,
        audit_delays: false,
    };
    let (trace, metrics) = run(&model, &ctx, &scenario, options)?;
    export_trace(&model, &trace, &metrics, &a.out)?;
    write_decision_log(&a.out.join("decisions.jsonl"), &trace.decisions)?;
    println!("{} steps in {:.1} s", metrics.steps, started.elapsed().as_secs_f64());
    println!(
        "requests {} accepted {} rejected {} deferred {} (mean delay {:.2} steps)",
        metrics.requests, metrics.accepted, metrics.rejected, metrics.deferred_requests, metrics.mean_delay
    );
    println!(
        "peak {:.4} p.u. vs uncontrolled {:.4} p.u. (ratio {:.3})",
        metrics.peak_controlled, metrics.peak_uncontrolled, metrics.peak_ratio
    );
    println!(
        "voltage [{:.4}, {:.4}] p.u., max relaxation gap {:.2e}",
        metrics.v_min, metrics.v_max, metrics.max_relaxation_gap
    );
    if let Some(r) = metrics.max_candidate_residual {
        println!("max shifted-candidate residual {r:.2e}");
    }
    println!("artifacts in {}", a.out.display());
    Ok(0)
}

fn baseline(a: BaselineArgs) -> Result<i32> {
    let Loaded { model, ctx, scenario } =
        load_run_inputs(a.network.as_deref(), &a.scenario, a.config.as_deref())?;
    let b = uncontrolled_baseline(&model, &scenario, ctx.dt())?;
    println!(
        "uncontrolled peak {:.4} p.u. (fixed load alone {:.4} p.u.) over {} steps",
        b.peak_uncontrolled, b.peak_fixed, b.steps
    );
    if let Some(out) = &a.out {
        write_json(out, &b)?;
    }
    Ok(0)
}

fn check_relaxation(a: RelaxationArgs) -> Result<i32> {
    let cases = oracle_agreement(a.seed..a.seed + a.count, a.max_buses)?;
    let worst = cases.iter().map(|c| c.max_nu_error).fold(0.0, f64::max);
    let bad = cases.iter().filter(|c| c.max_nu_error > 1e-6).count();
    println!(
        "{} random feeders: worst |nu - nu_exact| {:.2e}, {} above 1e-6",
        cases.len(),
        worst,
        bad
    );
    let mut code = i32::from(bad > 0);
    if let Some(n) = &a.network {
        let model = NetworkModel::from_path(n)?;
        let (cfg, base) = load_config(a.config.as_deref())?;
        let ctx = ControllerContext::new(&model, &cfg, base.as_deref())?;
        let reference = solve_stage1(&model, &ctx)?;
        let report = check_relaxation_exactness(&model, &reference.flows, GAP_TOL);
        println!(
            "stage-1 reference on {}: max gap {:.2e}, {} line-steps above {:.0e}",
            model.name(),
            report.max_gap,
            report.flagged.len(),
            GAP_TOL
        );
        if !report.is_exact() {
            code = 1;
        }
    }
    if let Some(out) = &a.out {
        write_json(out, &cases)?;
    }
    Ok(code)
}

fn check_feasibility(a: FeasibilityArgs) -> Result<i32> {
    let model = NetworkModel::from_path(&a.network)?;
    let (cfg, base) = load_config(a.config.as_deref())?;
    let ctx = ControllerContext::new(&model, &cfg, base.as_deref())?;
    let reference = solve_stage1(&model, &ctx)?;
    let params = GenParams {
        steps: a.steps,
        intensity: a.intensity,
        buses: model.batteries().iter().map(|b| b.bus).collect(),
        ..GenParams::default()
    };
    let started = Instant::now();
    let report = recursive_feasibility(&model, &ctx, &reference, a.seed, a.count, &params)?;
    let accepted: usize = report.outcomes.iter().map(|o| o.accepted).sum();
    let requests: usize = report.outcomes.iter().map(|o| o.requests).sum();
    let deferred: usize = report.outcomes.iter().map(|o| o.deferred).sum();
    println!(
        "{} infeasible steps across {} scenarios",
        report.infeasible_steps, report.scenarios
    );
    println!(
        "{accepted} of {requests} requests admitted ({deferred} deferred), {} other failures, {:.1} s",
        report.other_failures,
        started.elapsed().as_secs_f64()
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(i32::from(report.infeasible_steps > 0 || report.other_failures > 0))
}

fn gen(a: GenArgs) -> Result<i32> {
    let mut params = match &a.params {
        Some(p) => crate::error::read_json::<GenParams>(p)?,
        None => GenParams::default(),
    };
    params.seed = a.seed;
    if let Some(s) = a.steps {
        params.steps = s;
    }
    if let Some(i) = a.intensity {
        params.intensity = i;
    }
    if let Some(n) = &a.network {
        let model = NetworkModel::from_path(n)?;
        let buses: Vec<usize> = model.batteries().iter().map(|b| b.bus).collect();
        if !buses.is_empty() {
            params.buses = buses;
        }
    }
    let scenario = gen_scenario(&params)?;
    std::fs::write(&a.out, scenario.to_json() + "\n").map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    println!(
        "{} requests over {} steps written to {}",
        scenario.requests.len(),
        scenario.steps,
        a.out.display()
    );
    Ok(0)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
