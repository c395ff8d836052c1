//! `walkin`: solve, cost, sweep and optimize appointment schedules.
//!
//! Every command writes its artifact plus a `<artifact>.manifest.json` next to it.
//! `walkin rerun --manifest FILE` replays the recorded invocation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use walkin_equilibrium::equilibrium::{solve, verify_equilibrium, EquilibriumResult, SolveConfig, VerifyTolerances};
use walkin_equilibrium::io::to_json_string;
use walkin_equilibrium::metrics::{evaluate_costs, simulate, SimulationConfig};
use walkin_equilibrium::optimizer::{
    optimize_de, sweep_equal_spacing, DEConfig, Evaluator, Pattern, SweepSpec, DEFAULT_GAMMAS,
};
use walkin_equilibrium::params::ModelParams;
use walkin_equilibrium::schedule::Schedule;
use walkin_equilibrium::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_IO: u8 = 5;

/// Environment variable naming the directory for outputs given without a path.
const OUT_DIR_VAR: &str = "WALKIN_OUT_DIR";

const DEFAULT_SCHEDULE: &str = "1,3,5";

#[derive(Debug, Parser)]
#[command(name = "walkin", version, about = "Strategic walk-ins in a queue with prioritized appointments")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the equilibrium arrival distribution of one schedule.
    Solve(SolveArgs),
    /// Check the equilibrium property of a solve output.
    Verify(VerifyArgs),
    /// Cost a schedule: simulated scheduled waits, numeric walk-in wait and idle time.
    Simulate(SimulateArgs),
    /// Equal-spacing sweep over front/back loaded schedules.
    Sweep(SweepArgs),
    /// Search for the schedule minimizing the social cost.
    Optimize(OptimizeArgs),
    /// Re-run the invocation recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct ModelArgs {
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 5.0)]
    horizon: f64,
    /// Time step of the forward integration.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Poisson mass kept by the state truncation.
    #[arg(long, default_value_t = 0.999)]
    trunc_mass: f64,
    /// Allow walk-ins to arrive before opening.
    #[arg(long)]
    early_arrivals: bool,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams, Error> {
        Ok(ModelParams::new(self.lambda, self.mu, self.horizon)?
            .with_delta(self.delta)
            .with_trunc_mass(self.trunc_mass))
    }
}

#[derive(Debug, Clone, Args)]
struct SolveArgs {
    /// Appointment times, e.g. `1,3,5`.
    #[arg(long)]
    schedule: String,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct VerifyArgs {
    /// Equilibrium JSON written by `solve`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct McArgs {
    #[arg(long, default_value_t = 10_000)]
    replications: usize,
    /// Simulation seed; drawn at random and recorded when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1_000)]
    batch_size: usize,
}

#[derive(Debug, Clone, Args)]
struct SimulateArgs {
    /// Appointment times (default `1,3,5`); alternatively `--input`.
    #[arg(long, conflicts_with = "input")]
    schedule: Option<String>,
    /// Equilibrium JSON written by `solve`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PatternArg {
    Front,
    Back,
    Both,
}

#[derive(Debug, Clone, Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "both")]
    pattern: PatternArg,
    /// Spacing grid `start:stop:step`.
    #[arg(long, default_value = "0.1:5:0.1")]
    delta_grid: String,
    /// Weights for the `phi_g*` columns; empty means 0.1,0.5,0.9.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    customers: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    De,
    Grid,
}

#[derive(Debug, Clone, Args)]
struct OptimizeArgs {
    #[arg(long, value_enum, default_value = "de")]
    method: MethodArg,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 3)]
    customers: usize,
    /// Replications per candidate inside the search.
    #[arg(long, default_value_t = 10_000)]
    replications: usize,
    /// Replications for the final incumbent.
    #[arg(long, default_value_t = 1_000_000)]
    final_replications: usize,
    /// Seed for both the search and the simulation; drawn and recorded when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    differential_weight: f64,
    #[arg(long, default_value_t = 0.9)]
    crossover: f64,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Initial population member, e.g. `0,0.6,1.2`.
    #[arg(long)]
    seed_schedule: Option<String>,
    /// Spacing grid of `--method grid`.
    #[arg(long, default_value = "0.1:5:0.1")]
    delta_grid: String,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write to this path instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    /// Arguments that reproduce the run, with drawn seeds filled in.
    argv: Vec<String>,
    parameters: serde_json::Value,
    version: String,
    /// Seconds since the Unix epoch.
    timestamp: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Domain(_) | Error::InvalidSchedule(_) | Error::InvalidParameter(_) | Error::InvalidEquilibrium(_) => {
                EXIT_USAGE
            }
            Error::Infeasible(_) => EXIT_INFEASIBLE,
            Error::Io(_) => EXIT_IO,
            _ => EXIT_SOLVER,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

fn output_path(out: &Option<PathBuf>, default_name: &str) -> PathBuf {
    match out {
        Some(p) => p.clone(),
        None => std::env::var_os(OUT_DIR_VAR).map_or_else(|| PathBuf::from("."), PathBuf::from).join(default_name),
    }
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    to_json_string(value).map_err(|e| Failure { code: EXIT_IO, message: e.to_string() })
}

/// Replaces or appends `--flag value` in a recorded argv.
fn set_flag(argv: &mut Vec<String>, flag: &str, value: &str) {
    if let Some(i) = argv.iter().position(|a| a == flag) {
        if i + 1 < argv.len() {
            argv[i + 1] = value.to_string();
            return;
        }
    }
    if let Some(i) = argv.iter().position(|a| a.starts_with(&format!("{flag}="))) {
        argv[i] = format!("{flag}={value}");
        return;
    }
    argv.push(flag.to_string());
    argv.push(value.to_string());
}

struct Context {
    argv: Vec<String>,
}

impl Context {
    fn finish(
        &self,
        command: &str,
        parameters: serde_json::Value,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        seed: Option<u64>,
    ) -> Result<(), Failure> {
        let mut argv = self.argv.clone();
        if let Some(s) = seed {
            set_flag(&mut argv, "--seed", &s.to_string());
        }
        if let Some(first) = outputs.first() {
            set_flag(&mut argv, "--out", &first.to_string_lossy());
        }
        let manifest = RunManifest {
            command: command.to_string(),
            argv,
            parameters,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs,
            outputs: outputs.clone(),
            seed,
        };
        let text = json(&manifest)?;
        write_file(&manifest_path(&outputs[0]), &text)
    }
}

fn cmd_solve(ctx: &Context, args: &SolveArgs) -> Result<(), Failure> {
    let params = args.model.params()?;
    let schedule = Schedule::parse(&args.schedule, params.horizon)?;
    let config = SolveConfig::default();
    let result = solve(&schedule, &params, &config, args.model.early_arrivals)?;
    let report = verify_equilibrium(&result)?;
    let out = output_path(&args.out, "equilibrium.json");
    write_file(&out, &json(&result)?)?;
    let report_path = out.with_extension("verify.json");
    write_file(&report_path, &json(&report)?)?;
    ctx.finish(
        "solve",
        serde_json::json!({ "schedule": schedule.times(), "model": args.model, "config": config }),
        vec![],
        vec![out.clone(), report_path],
        None,
    )?;
    let gap = (result.diagnostics.cdf_terminal - 1.0).abs();
    eprintln!(
        "p_e = {:.4}, t0 = {:.4}, E_w = {:.4}, F(T) = {:.4} -> {}",
        result.atom,
        result.support_start,
        result.expected_wait,
        result.diagnostics.cdf_terminal,
        out.display()
    );
    if gap > config.cdf_tol {
        return Err(Failure { code: EXIT_SOLVER, message: format!("|F(T) - 1| = {gap} exceeds {}", config.cdf_tol) });
    }
    Ok(())
}

fn load_result(path: &Path) -> Result<EquilibriumResult, Failure> {
    EquilibriumResult::from_json(&read_file(path)?).map_err(|e| io_failure(path, e))
}

fn cmd_verify(ctx: &Context, args: &VerifyArgs) -> Result<(), Failure> {
    let result = load_result(&args.input)?;
    let report = verify_equilibrium(&result)?;
    let tol = VerifyTolerances::default();
    let out = output_path(&args.out, "verify.json");
    write_file(&out, &json(&report)?)?;
    ctx.finish("verify", serde_json::json!({ "tolerances": tol }), vec![args.input.clone()], vec![out], None)?;
    eprintln!(
        "on-support deviation {:.4}, off-support margin {:.2e}: {}",
        report.on_support_max_rel_dev,
        report.off_support_min_margin,
        if report.passed(&tol) { "passed" } else { "FAILED" }
    );
    if !report.passed(&tol) {
        return Err(Failure { code: EXIT_SOLVER, message: "equilibrium check failed".into() });
    }
    Ok(())
}

fn draw_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn cmd_simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), Failure> {
    let (result, inputs) = match (&args.input, &args.schedule) {
        (Some(path), _) => (load_result(path)?, vec![path.clone()]),
        (None, text) => {
            let params = args.model.params()?;
            let schedule = Schedule::parse(text.as_deref().unwrap_or(DEFAULT_SCHEDULE), params.horizon)?;
            (solve(&schedule, &params, &SolveConfig::default(), args.model.early_arrivals)?, vec![])
        }
    };
    let seed = draw_seed(args.mc.seed);
    let config = SimulationConfig { replications: args.mc.replications, seed, batch_size: args.mc.batch_size };
    let costs = evaluate_costs(&result, &config)?;
    let summary = simulate(&result, &config)?;
    let out = output_path(&args.out, "costs.json");
    let doc = serde_json::json!({ "costs": costs, "simulation": summary });
    write_file(&out, &json(&doc)?)?;
    ctx.finish(
        "simulate",
        serde_json::json!({ "schedule": result.schedule, "params": result.params, "early": result.early, "simulation": config }),
        inputs,
        vec![out.clone()],
        Some(seed),
    )?;
    eprintln!(
        "phi_s = {:.4} (+-{:.4}), E_w = {:.4}, E_I = {:.4} -> {}",
        costs.phi_s,
        costs.ci_halfwidths.phi_s,
        costs.e_w,
        costs.e_i,
        out.display()
    );
    Ok(())
}

fn patterns(p: PatternArg) -> Vec<Pattern> {
    match p {
        PatternArg::Front => vec![Pattern::Front],
        PatternArg::Back => vec![Pattern::Back],
        PatternArg::Both => vec![Pattern::Front, Pattern::Back],
    }
}

fn evaluator(model: &ModelArgs, replications: usize, seed: u64, batch_size: usize) -> Result<Evaluator, Failure> {
    let mut eval = Evaluator::new(model.params()?, SimulationConfig { replications, seed, batch_size });
    eval.early = model.early_arrivals;
    Ok(eval)
}

fn cmd_sweep(ctx: &Context, args: &SweepArgs) -> Result<(), Failure> {
    let (start, stop, step) = SweepSpec::parse_grid(&args.delta_grid)?;
    let gammas = if args.gamma.is_empty() { DEFAULT_GAMMAS.to_vec() } else { args.gamma.clone() };
    let spec = SweepSpec { patterns: patterns(args.pattern), start, stop, step, customers: args.customers, gammas };
    let seed = draw_seed(args.mc.seed);
    let eval = evaluator(&args.model, args.mc.replications, seed, args.mc.batch_size)?;
    let table = sweep_equal_spacing(&spec, &eval)?;
    let out = output_path(&args.out, "sweep.csv");
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_file(&out, &String::from_utf8_lossy(&buf))?;
    let failures: Vec<_> = table
        .rows
        .iter()
        .filter_map(|r| match &r.outcome {
            walkin_equilibrium::optimizer::RowOutcome::Failed { message } => {
                Some(serde_json::json!({ "pattern": r.pattern, "delta": r.spacing, "error": message }))
            }
            _ => None,
        })
        .collect();
    ctx.finish(
        "sweep",
        serde_json::json!({ "spec": spec, "evaluator": eval, "failures": failures }),
        vec![],
        vec![out.clone()],
        Some(seed),
    )?;
    eprintln!("{} rows, {} failed -> {}", table.rows.len(), failures.len(), out.display());
    if !failures.is_empty() {
        return Err(Failure { code: EXIT_SOLVER, message: format!("{} sweep points failed", failures.len()) });
    }
    Ok(())
}

fn cmd_optimize(ctx: &Context, args: &OptimizeArgs) -> Result<(), Failure> {
    let seed = draw_seed(args.seed);
    let eval = evaluator(&args.model, args.replications, seed, 1_000)?;
    let out = output_path(&args.out, "optimize.json");
    let config = DEConfig {
        population: args.population,
        differential_weight: args.differential_weight,
        crossover: args.crossover,
        max_iterations: args.max_iterations,
        window: args.window,
        tolerance: args.tolerance,
        seed,
        final_replications: args.final_replications,
    };
    let doc = match args.method {
        MethodArg::De => {
            let seed_schedule = args
                .seed_schedule
                .as_deref()
                .map(|s| Schedule::parse(s, args.model.horizon).map(|s| s.times().to_vec()))
                .transpose()?;
            let r = optimize_de(&eval, args.gamma, args.customers, &config, seed_schedule.as_deref())?;
            eprintln!(
                "best {:?}, phi* = {:.4} after {} iterations{}",
                r.best_schedule,
                r.phi_star,
                r.iterations,
                if r.converged { "" } else { " (not converged)" }
            );
            serde_json::to_value(&r).map_err(|e| Failure { code: EXIT_IO, message: e.to_string() })?
        }
        MethodArg::Grid => {
            let (start, stop, step) = SweepSpec::parse_grid(&args.delta_grid)?;
            let spec = SweepSpec {
                patterns: vec![Pattern::Front, Pattern::Back],
                start,
                stop,
                step,
                customers: args.customers,
                gammas: vec![args.gamma],
            };
            let final_eval = eval.with_replications(args.final_replications);
            let table = sweep_equal_spacing(&spec, &final_eval)?;
            let best = table
                .best(args.gamma)
                .ok_or_else(|| Failure { code: EXIT_SOLVER, message: "no sweep point could be evaluated".into() })?;
            let phi = best.phi(args.gamma).unwrap_or(f64::NAN);
            eprintln!("best {:?} (spacing {}), phi = {:.4}", best.schedule, best.spacing, phi);
            serde_json::json!({
                "lambda": args.model.lambda,
                "gamma": args.gamma,
                "config": spec,
                "best_schedule": best.schedule,
                "phi_star": phi,
                "iterations": table.rows.len(),
                "trace": Vec::<(usize, f64)>::new(),
                "costs": best.costs(),
                "failures": table.failures(),
            })
        }
    };
    write_file(&out, &json(&doc)?)?;
    ctx.finish(
        "optimize",
        serde_json::json!({ "model": args.model, "evaluator": eval, "de": config }),
        vec![],
        vec![out],
        Some(seed),
    )
}

fn cmd_rerun(args: &RerunArgs) -> Result<(), Failure> {
    let manifest: RunManifest =
        serde_json::from_str(&read_file(&args.manifest)?).map_err(|e| io_failure(&args.manifest, e))?;
    let mut argv = manifest.argv;
    if let Some(out) = &args.out {
        set_flag(&mut argv, "--out", &out.to_string_lossy());
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| Failure { code: EXIT_USAGE, message: e.to_string() })?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Failure { code: EXIT_USAGE, message: "a manifest cannot record a rerun".into() });
    }
    dispatch(cli, argv)
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<(), Failure> {
    let ctx = Context { argv };
    match &cli.command {
        Command::Solve(a) => cmd_solve(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Optimize(a) => cmd_optimize(&ctx, a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match dispatch(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
