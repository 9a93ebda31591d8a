//! `dlmp` command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | usage error |
//! | 3 | malformed or invalid scenario input |
//! | 4 | infeasible problem |
//! | 5 | relaxation not exact at the optimum |
//! | 6 | iteration limit reached before convergence (artifacts written) |
//! | 7 | solver failure (unbounded, numerical trouble, divergence) |
//! | 8 | a VCG counterfactual solve was not optimal (report written) |
//! | 9 | could not write outputs |

mod report;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dlmp::conic::{SolveOptions, Status};
use dlmp::coordination::{run, AlgoConfig, Algorithm, CoordinationError};
use dlmp::mechanism::{
    compare, default_penalty, dvcg_payments, reproduce_example1, settle, vcg_payments, Agreement, MechanismError,
};
use dlmp::network::NetworkError;
use dlmp::opf::{check_exactness, solve_central, solve_dso, OpfError, OpfSolution};
use dlmp::report::{exactness_summary, example1_table, payment_table, solution_table};
use dlmp::scenario::{
    fixture_15bus, fixture_15bus_table2_profiles, fixture_toy, load_scenario, save_scenario, synthetic_scenario,
    Profiles, Scenario, ScenarioError, SyntheticOptions, ToyCostForm,
};

use report::{CoordinationSummary, RunReport, ScenarioDigest, SolutionSummary, Timing};

const EXIT_INTERNAL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_INEXACT: u8 = 5;
const EXIT_MAX_ITER: u8 = 6;
const EXIT_SOLVER: u8 = 7;
const EXIT_COUNTERFACTUAL: u8 = 8;
const EXIT_OUTPUT: u8 = 9;

/// Cone gap above which a central optimum is reported as inexact.
const EXACTNESS_TOL: f64 = 1e-6;

/// Truncation bound of the recomputed prices when a settlement sees deviations.
const SETTLE_K: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(
    name = "dlmp",
    version,
    about = "Distribution OPF, DLMPs and DSO/aggregator coordination"
)]
struct Cli {
    /// Directory for report.json, report.txt and curve files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Interior-point tolerance.
    #[arg(long, global = true, env = "DLMP_SOLVER_TOL")]
    solver_tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a scenario file.
    GenScenario(GenArgs),
    /// Solve the central problem and report prices and exactness.
    SolveCentral(CentralArgs),
    /// Run a decentralized algorithm and compare it with the central solve.
    Coordinate(CoordArgs),
    /// Settle DLMP payments and compare them with VCG payments.
    CompareMechanisms(MechArgs),
}

/// Seeds are stored as TOML integers, which are signed 64-bit.
fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(..=i64::MAX as u64)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fixture {
    Toy,
    #[value(name = "15bus")]
    Bus15,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenKind {
    Toy,
    #[value(name = "15bus")]
    Bus15,
    Synthetic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileSet {
    Table2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgoArg {
    DualAscent,
    Admm,
    Pdgs,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::DualAscent => Algorithm::DualAscent,
            AlgoArg::Admm => Algorithm::Admm,
            AlgoArg::Pdgs => Algorithm::Pdgs,
        }
    }
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(conflicts_with = "fixture")]
    scenario: Option<PathBuf>,
    /// Built-in fixture instead of a file.
    #[arg(long)]
    fixture: Option<Fixture>,
    /// Seed of the 15-bus fixture's random load bounds.
    #[arg(long, default_value_t = 11, value_parser = seed_parser())]
    seed: u64,
}

impl ScenarioArgs {
    fn load(&self) -> Result<(Scenario, String)> {
        match (&self.scenario, self.fixture) {
            (Some(path), _) => {
                let sc = load_scenario(path).with_context(|| format!("reading {}", path.display()))?;
                Ok((sc, path.display().to_string()))
            }
            (None, Some(Fixture::Toy)) => Ok((fixture_toy(), "fixture:toy".into())),
            (None, Some(Fixture::Bus15)) => Ok((fixture_15bus(self.seed), format!("fixture:15bus:{}", self.seed))),
            (None, None) => Err(usage("give a scenario file or --fixture")),
        }
    }

    fn json(&self) -> serde_json::Value {
        json!({
            "scenario": self.scenario,
            "fixture": self.fixture.and_then(|f| f.to_possible_value()).map(|v| v.get_name().to_string()),
            "seed": self.seed,
        })
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_parser = seed_parser())]
    seed: u64,
    #[arg(long, value_enum, default_value = "15bus")]
    kind: GenKind,
    /// Bus count of a synthetic instance, root included.
    #[arg(long, default_value_t = 6)]
    buses: usize,
    #[arg(long, default_value_t = 2)]
    periods: usize,
    /// Output file; defaults to `<out-dir>/scenario.toml`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CentralArgs {
    #[command(flatten)]
    input: ScenarioArgs,
    /// Fix the aggregator profiles and solve only the operator problem.
    #[arg(long)]
    profiles: Option<ProfileSet>,
}

#[derive(Debug, Args)]
struct CoordArgs {
    #[command(flatten)]
    input: ScenarioArgs,
    #[arg(long, value_enum)]
    algo: AlgoArg,
    #[arg(long)]
    rho: Option<f64>,
    /// Truncation penalty of PDGS.
    #[arg(long = "K", alias = "k")]
    k_trunc: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    step0: Option<f64>,
    #[arg(long)]
    tol_primal: Option<f64>,
    #[arg(long)]
    tol_obj: Option<f64>,
}

#[derive(Debug, Args)]
struct MechArgs {
    #[command(flatten)]
    input: ScenarioArgs,
    /// Settle the published fixed profiles instead of the central optimum.
    #[arg(long)]
    profiles: Option<ProfileSet>,
    /// Compute VCG from decentralized (ADMM) runs.
    #[arg(long)]
    decentralized: bool,
    /// Reproduce the two-period incentive counterexample instead.
    #[arg(long)]
    example1: bool,
    /// Use the literal reading of the counterexample's period costs.
    #[arg(long, requires = "example1")]
    literal: bool,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: &str) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

fn status_code(status: Status) -> u8 {
    match status {
        Status::Optimal => 0,
        Status::Infeasible => EXIT_INFEASIBLE,
        Status::Unbounded | Status::NumericalFailure => EXIT_SOLVER,
    }
}

/// Maps an error chain to an exit code.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<ScenarioError>() || cause.is::<NetworkError>() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<CoordinationError>() {
            return match e {
                CoordinationError::InfeasibleLa { .. } => EXIT_INFEASIBLE,
                CoordinationError::InvalidConfig(_) => EXIT_USAGE,
                CoordinationError::DsoFailure { .. } | CoordinationError::Divergence { .. } => EXIT_SOLVER,
                CoordinationError::Opf(_) => EXIT_SOLVER,
            };
        }
        if let Some(e) = cause.downcast_ref::<MechanismError>() {
            return match e {
                MechanismError::FullProblem(Status::Infeasible) => EXIT_INFEASIBLE,
                MechanismError::NotConverged => EXIT_MAX_ITER,
                _ => EXIT_SOLVER,
            };
        }
        if cause.is::<OpfError>() {
            return EXIT_SOLVER;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_OUTPUT;
        }
    }
    EXIT_INTERNAL
}

struct Ctx {
    out_dir: PathBuf,
    opts: SolveOptions,
    started: Instant,
}

impl Ctx {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn finish(&self, mut report: RunReport, text: &str) -> Result<u8> {
        report.timing.wall_seconds = self.started.elapsed().as_secs_f64();
        print!("{text}");
        self.write("report.txt", text)?;
        let json = serde_json::to_string_pretty(&report).context("serializing report")?;
        self.write("report.json", &(json + "\n"))?;
        Ok(report.exit_code)
    }

    fn report(&self, command: &str, args: serde_json::Value, sc: &Scenario, source: &str) -> RunReport {
        RunReport {
            command: command.to_string(),
            args,
            scenario: ScenarioDigest::of(sc, source),
            solver_tol: self.opts.tol,
            exit_code: 0,
            solution: None,
            exactness: None,
            coordination: None,
            settlement: None,
            vcg: None,
            comparison: None,
            example1: None,
            timing: Timing::default(),
        }
    }
}

fn table2_profiles(sc: &Scenario) -> Result<Profiles> {
    let x = fixture_15bus_table2_profiles();
    if x.buses() != sc.num_buses() || x.periods() != sc.periods() {
        return Err(usage("--profiles table2 needs the 15-bus network with two periods"));
    }
    Ok(x)
}

fn gen_scenario(ctx: &Ctx, args: &GenArgs) -> Result<u8> {
    let sc = match args.kind {
        GenKind::Toy => fixture_toy(),
        GenKind::Bus15 => fixture_15bus(args.seed),
        GenKind::Synthetic => synthetic_scenario(
            args.seed,
            SyntheticOptions {
                buses: args.buses,
                periods: args.periods,
                zero_impedance: false,
            },
        )?,
    };
    let path = match &args.out {
        Some(p) => p.clone(),
        None => {
            fs::create_dir_all(&ctx.out_dir).with_context(|| format!("creating {}", ctx.out_dir.display()))?;
            ctx.out_dir.join("scenario.toml")
        }
    };
    save_scenario(&sc, &path).map_err(|e| match e {
        ScenarioError::Io(io) => anyhow::Error::new(io).context(format!("writing {}", path.display())),
        other => other.into(),
    })?;
    let digest = ScenarioDigest::of(&sc, &path.display().to_string());
    println!("wrote {} (sha256 {})", path.display(), digest.sha256);
    Ok(0)
}

fn solve_central_cmd(ctx: &Ctx, args: &CentralArgs) -> Result<u8> {
    let (sc, source) = args.input.load()?;
    let t0 = Instant::now();
    let sol = match args.profiles {
        Some(ProfileSet::Table2) => solve_dso(&sc, &table2_profiles(&sc)?, &ctx.opts)?,
        None => solve_central(&sc, &ctx.opts)?,
    };
    let solver_seconds = t0.elapsed().as_secs_f64();
    let exact = check_exactness(&sol.vars, EXACTNESS_TOL);

    let mut text = format!("status: {}\nobjective: {:.6}\n\n", sol.status, sol.objective_value);
    let mut code = status_code(sol.status);
    if sol.is_optimal() {
        text += &solution_table(&sc, &sol);
        text += &exactness_summary(&exact);
        if !exact.is_exact {
            code = EXIT_INEXACT;
        }
    }
    let mut args_json = args.input.json();
    args_json["profiles"] = json!(args.profiles.map(|_| "table2"));
    let mut report = ctx.report("solve-central", args_json, &sc, &source);
    report.exit_code = code;
    report.solution = Some(SolutionSummary::of(&sc, &sol));
    report.exactness = Some(exact);
    report.timing.solver_seconds = Some(solver_seconds);
    ctx.finish(report, &text)
}

fn coordinate_cmd(ctx: &Ctx, args: &CoordArgs) -> Result<u8> {
    let (sc, source) = args.input.load()?;
    let mut cfg = AlgoConfig::new(args.algo.into());
    cfg.solver = ctx.opts.clone();
    cfg.record_transcript = false;
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.k_trunc {
        cfg.k_trunc = v;
    }
    if let Some(v) = args.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = args.step0 {
        cfg.step0 = v;
    }
    if let Some(v) = args.tol_primal {
        cfg.tol_primal = v;
    }
    if let Some(v) = args.tol_obj {
        cfg.tol_obj = v;
    }
    cfg.validate()?;

    let central = solve_central(&sc, &ctx.opts)?;
    if !central.is_optimal() {
        bail!(MechanismError::FullProblem(central.status));
    }
    let t0 = Instant::now();
    let res = run(&sc, &cfg)?;
    let solver_seconds = t0.elapsed().as_secs_f64();
    ctx.write("curves.csv", &res.curves_csv())?;

    let summary = CoordinationSummary::of(&res, &central);
    let text = format!(
        "algorithm: {}\niterations: {}\nconverged: {}\nobjective: {:.6}\ncentral objective: {:.6}\nobjective gap: {:.3e}\nprimal residual: {:.3e}\nmax dlmp gap: {:.3e}\ninfeasible rounds: {:?}\ncurves: {}\n",
        summary.algorithm,
        summary.iterations,
        summary.converged,
        summary.objective,
        summary.central_objective,
        summary.objective_gap,
        summary.primal_residual,
        summary.dlmp_gap,
        summary.infeasible_rounds,
        ctx.out_dir.join("curves.csv").display()
    );
    let mut args_json = args.input.json();
    args_json["config"] = serde_json::to_value(&cfg).context("serializing config")?;
    let mut report = ctx.report("coordinate", args_json, &sc, &source);
    report.exit_code = if res.converged { 0 } else { EXIT_MAX_ITER };
    report.coordination = Some(summary);
    report.timing.solver_seconds = Some(solver_seconds);
    ctx.finish(report, &text)
}

fn compare_cmd(ctx: &Ctx, args: &MechArgs) -> Result<u8> {
    if args.example1 {
        let form = if args.literal {
            ToyCostForm::Literal
        } else {
            ToyCostForm::Corrected
        };
        let rec = reproduce_example1(form, &ctx.opts)?;
        let sc = dlmp::scenario::fixture_toy_with(form);
        let args_json = json!({ "example1": true, "literal": args.literal });
        let mut report = ctx.report("compare-mechanisms", args_json, &sc, "fixture:toy");
        let text = example1_table(&rec);
        report.example1 = Some(rec);
        return ctx.finish(report, &text);
    }

    let (sc, source) = args.input.load()?;
    let (agreement, tau_pen) = match args.profiles {
        Some(ProfileSet::Table2) => {
            let x = table2_profiles(&sc)?;
            let sol = optimal(solve_dso(&sc, &x, &ctx.opts)?)?;
            let objective = sol.objective_value;
            (
                Agreement {
                    x,
                    lambda: sol.dlmps,
                    objective,
                },
                default_penalty(objective),
            )
        }
        None => {
            let sol = optimal(solve_central(&sc, &ctx.opts)?)?;
            let objective = sol.objective_value;
            (
                Agreement {
                    x: sol.vars.profiles(),
                    lambda: sol.dlmps,
                    objective,
                },
                default_penalty(objective),
            )
        }
    };
    let settlement = settle(&sc, &agreement, &agreement.x, tau_pen, SETTLE_K, &ctx.opts)?;
    let vcg = if args.decentralized {
        let mut cfg = AlgoConfig::new(Algorithm::Admm);
        cfg.solver = ctx.opts.clone();
        cfg.record_transcript = false;
        dvcg_payments(&sc, &cfg)?
    } else {
        vcg_payments(&sc, &ctx.opts)?
    };
    let rows = compare(&settlement, Some(&vcg));
    let mut text = payment_table(&rows);
    let failed: Vec<_> = vcg
        .entries
        .iter()
        .filter(|e| e.counterfactual_status != Status::Optimal)
        .map(|e| (e.aggregator, e.counterfactual_status))
        .collect();
    for (a, s) in &failed {
        text += &format!("aggregator {a}: counterfactual solve {s}\n");
    }
    let mut args_json = args.input.json();
    args_json["profiles"] = json!(args.profiles.map(|_| "table2"));
    args_json["decentralized"] = json!(args.decentralized);
    let mut report = ctx.report("compare-mechanisms", args_json, &sc, &source);
    report.exit_code = if failed.is_empty() { 0 } else { EXIT_COUNTERFACTUAL };
    report.settlement = Some(settlement);
    report.vcg = Some(vcg);
    report.comparison = Some(rows);
    ctx.finish(report, &text)
}

fn optimal(sol: OpfSolution) -> Result<OpfSolution> {
    if sol.is_optimal() {
        Ok(sol)
    } else {
        Err(MechanismError::FullProblem(sol.status).into())
    }
}

fn solver_options(tol: Option<f64>) -> Result<SolveOptions> {
    let mut opts = SolveOptions::default();
    if let Some(t) = tol {
        if !(t.is_finite() && t > 0.0) {
            return Err(usage("solver tolerance must be a positive number"));
        }
        opts.tol = t;
    }
    Ok(opts)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let ctx = Ctx {
        out_dir: cli.out_dir.clone(),
        opts: solver_options(cli.solver_tol)?,
        started: Instant::now(),
    };
    match &cli.command {
        Command::GenScenario(a) => gen_scenario(&ctx, a),
        Command::SolveCentral(a) => solve_central_cmd(&ctx, a),
        Command::Coordinate(a) => coordinate_cmd(&ctx, a),
        Command::CompareMechanisms(a) => compare_cmd(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
