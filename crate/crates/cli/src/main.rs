//! `externreg`: evaluate, optimize and approximate regulatory policies.
//!
//! Every command writes JSON (or CSV for tables) to stdout. Exit codes:
//! 0 success, 1 precondition or failed check, 2 parse, 3 infeasible,
//! 4 degenerate policy, 5 I/O, 6 unknown case.

// `!(a > b)` is deliberate: it sends NaN down the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod parse;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use externreg::approx::{approx_routine, ApproxTrace};
use externreg::casebook::{run_case, CaseReport, CASE_NAMES};
use externreg::exec::map_indexed;
use externreg::fuzz::{fuzz_theorem, Profile, DEFAULT_SEED};
use externreg::model::{evaluate_with_tie, summarize};
use externreg::simple_opt::{
    best_cost_policy, best_fine_policy, best_general_policy, cutoff_t, LinearGrid, LogGrid,
    SolverConfig,
};
use externreg::stackelberg::revenue_table;
use externreg::sweep::{run_sweep, SweepSpec};
use externreg::{
    DiscreteDistribution, Error, Execution, ExternalityMode, Instance, Policy, Population,
};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    ChecksFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e {
                Error::Parse(_)
                | Error::InvalidDistribution(_)
                | Error::InvalidRange { .. }
                | Error::InvalidPolicy(_)
                | Error::InvalidInstance(_) => 2,
                Error::Infeasible { .. } => 3,
                Error::ZeroSaleProbability => 4,
                Error::UnknownCase(_) => 6,
                Error::Domain(_) | Error::Precondition(_) | Error::TooManyAtoms { .. } => 1,
                // Future variants default to a generic failure.
                #[allow(unreachable_patterns)]
                _ => 1,
            },
            CliError::Read { .. } | CliError::Write { .. } => 5,
            CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Degenerate(_) => 4,
            CliError::ChecksFailed(_) => 1,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "externreg",
    version,
    about = "Regulate a single-item market with a security externality"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the population comes from: an instance file or distribution flags.
#[derive(Args, Clone)]
struct Source {
    /// Instance JSON: {"values":[{"v","prob"}],"efficiencies":[{"k","prob"}],"profit_floor"}.
    #[arg(long, conflicts_with_all = ["values", "effs"])]
    instance: Option<PathBuf>,
    /// Value distribution: uniform:lo,hi,n | point:v | atoms:v=p,...
    #[arg(long, value_parser = parse::distribution, requires = "effs")]
    values: Option<DiscreteDistribution>,
    /// Effectiveness distribution, same shorthand as --values.
    #[arg(long, value_parser = parse::distribution, requires = "values")]
    effs: Option<DiscreteDistribution>,
    /// Profit floor R; overrides the instance file's floor.
    #[arg(long)]
    floor: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Conditional,
    Total,
}

impl From<Mode> for ExternalityMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Conditional => ExternalityMode::Conditional,
            Mode::Total => ExternalityMode::Total,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Cost,
    Fine,
    General,
}

#[derive(Clone, Copy, ValueEnum)]
enum FuzzProfile {
    Standard,
    HeavyTail,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Json,
    Csv,
}

#[derive(Args, Clone)]
struct SolverFlags {
    #[arg(long, default_value_t = 1e-4)]
    y_min: f64,
    #[arg(long, default_value_t = 1e4)]
    y_max: f64,
    #[arg(long, default_value_t = 400)]
    y_count: usize,
    /// Largest mandated cost on the grid; defaults to the largest value.
    #[arg(long)]
    c_max: Option<f64>,
    #[arg(long, default_value_t = 400)]
    c_count: usize,
    #[arg(long, default_value_t = 40)]
    refine_iters: usize,
    /// Profit slack accepted as meeting the floor.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Search the general grid without seeding it with the simple optima.
    #[arg(long)]
    no_warm_start: bool,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl SolverFlags {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            y_grid: LogGrid {
                min: self.y_min,
                max: self.y_max,
                count: self.y_count,
            },
            c_grid: LinearGrid {
                min: 0.0,
                max: self.c_max,
                count: self.c_count,
            },
            refine_iters: self.refine_iters,
            tolerance: self.tolerance,
            warm_start: !self.no_warm_start,
            execution: execution(self.sequential),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one policy: per-type outcomes, sales, profit, externality.
    Eval {
        #[command(flatten)]
        source: Source,
        /// y=…,c=…,p=…
        #[arg(long, value_parser = parse::policy)]
        policy: Policy,
        #[arg(long, value_enum, default_value = "conditional")]
        mode: Mode,
        /// Share of indifferent buyers who purchase.
        #[arg(long, default_value_t = 1.0)]
        tie: f64,
    },
    /// Externality-minimal policy of a family under the profit floor.
    Optimize {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        family: Family,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Turn a policy into a simple one with bounded profit and externality loss.
    Approx {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_parser = parse::policy)]
        policy: Policy,
    },
    /// Seller profit over a (fine, cost) grid at the profit-maximizing price, as CSV.
    Sweep {
        #[arg(long, value_parser = parse::distribution, default_value = "uniform:0,20,200")]
        values: DiscreteDistribution,
        #[arg(long, value_parser = parse::distribution, default_value = "uniform:0,1,50")]
        effs: DiscreteDistribution,
        /// Fines: a,b,c or lo:hi:n.
        #[arg(long, value_parser = parse::grid, default_value = "0,0.5,1,2,5")]
        fines: parse::Grid,
        /// Costs: a,b,c or lo:hi:n.
        #[arg(long, value_parser = parse::grid, default_value = "0:5:21")]
        costs: parse::Grid,
        #[arg(long, value_enum, default_value = "conditional")]
        mode: Mode,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Largest affordable mandated cost c* and the effectiveness cutoff 1 + 1/c*.
    Cutoff {
        #[command(flatten)]
        source: Source,
    },
    /// Rebuild and check the worked examples.
    Casebook {
        /// non-monotone | new-example | lower-bound | profits-max | all
        #[arg(default_value = "all")]
        case: String,
        /// Case parameter x (new-example: x >= 100; lower-bound: x in [2, 8]).
        #[arg(long)]
        x: Option<f64>,
        /// One JSON report object per line instead of pass/fail lines.
        #[arg(long)]
        json: bool,
    },
    /// Seeded randomized check of the approximation guarantee.
    Fuzz {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Overrides EXTERNREG_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "standard")]
        profile: FuzzProfile,
        #[arg(long)]
        sequential: bool,
    },
    /// Revenue table of the profit-maximizing seller at fixed (y, c).
    Revenue {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = 0.0)]
        c: f64,
        #[arg(long, value_enum, default_value = "json")]
        format: TableFormat,
    },
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_owned(),
        source,
    })
}

fn population(src: &Source) -> CliResult<Population> {
    match (&src.instance, &src.values, &src.effs) {
        (Some(path), _, _) => Ok(Instance::from_json(&read(path)?)?.population().clone()),
        (None, Some(v), Some(k)) => Ok(Population::new(v.clone(), k.clone())?),
        _ => Err(CliError::Usage(
            "give --instance or both --values and --effs".into(),
        )),
    }
}

fn instance(src: &Source) -> CliResult<Instance> {
    if let Some(path) = &src.instance {
        let inst = Instance::from_json(&read(path)?)?;
        return match src.floor {
            Some(r) => Ok(Instance::new(inst.population().clone(), r)?),
            None => Ok(inst),
        };
    }
    let floor = src
        .floor
        .ok_or_else(|| CliError::Usage("--floor is required without --instance".into()))?;
    Ok(Instance::new(population(src)?, floor)?)
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    writeln!(io::stdout(), "{text}").map_err(|source| CliError::Write {
        path: "stdout".into(),
        source,
    })
}

#[derive(Serialize)]
struct ApproxReport {
    input: Policy,
    output: Policy,
    tie_fraction: f64,
    input_profit: f64,
    output_profit: f64,
    input_externality: f64,
    output_externality: f64,
    profit_ratio: f64,
    externality_ratio: f64,
    trace: ApproxTrace,
}

fn cmd_approx(src: &Source, s: &Policy) -> CliResult {
    let pop = population(src)?;
    s.validate()?;
    if s.p <= s.c {
        return Err(CliError::Degenerate(format!(
            "price {} must exceed cost {}",
            s.p, s.c
        )));
    }
    if summarize(&pop.product_atoms(), s, 1.0).sale_prob <= 0.0 {
        return Err(Error::ZeroSaleProbability.into());
    }
    let (out, trace) = approx_routine(&pop, s)?;
    let before = evaluate_with_tie(&pop, s, ExternalityMode::Conditional, 1.0);
    let after = evaluate_with_tie(&pop, &out, ExternalityMode::Conditional, trace.tie_fraction);
    print_json(&ApproxReport {
        input: *s,
        output: out,
        tie_fraction: trace.tie_fraction,
        input_profit: before.profit,
        output_profit: after.profit,
        input_externality: before.externality,
        output_externality: after.externality,
        profit_ratio: after.profit / before.profit,
        externality_ratio: after.externality / before.externality,
        trace,
    })
}

fn cmd_optimize(src: &Source, family: Family, flags: &SolverFlags) -> CliResult {
    let inst = instance(src)?;
    let config = flags.config();
    let result = match family {
        Family::Cost => best_cost_policy(&inst, &config),
        Family::Fine => best_fine_policy(&inst, &config),
        Family::General => best_general_policy(&inst, &config),
    }?;
    print_json(&result)?;
    if !result.feasible {
        return Err(CliError::Infeasible(format!(
            "best policy found earns {} below the floor {}",
            result.outcome.profit,
            inst.profit_floor()
        )));
    }
    Ok(())
}

fn csv_error(path: &str, e: csv::Error) -> CliError {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => io::Error::other(format!("{other:?}")),
    };
    CliError::Write {
        path: path.to_owned(),
        source,
    }
}

fn write_csv<T: Serialize>(rows: &[T], out: Option<&Path>) -> CliResult {
    let name = out.map_or_else(|| "stdout".to_owned(), |p| p.display().to_string());
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p).map_err(|source| CliError::Write {
            path: name.clone(),
            source,
        })?),
        None => Box::new(io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(&name, e))?;
    }
    w.flush()
        .map_err(|source| CliError::Write { path: name, source })
}

fn cmd_casebook(case: &str, x: Option<f64>, json: bool) -> CliResult {
    let names: Vec<&str> = if case == "all" {
        CASE_NAMES.to_vec()
    } else {
        vec![case]
    };
    let reports: Vec<Result<CaseReport, Error>> =
        map_indexed(names.len(), Execution::Parallel, |i| run_case(names[i], x));
    let mut out = io::stdout().lock();
    let mut failing = Vec::new();
    for report in reports {
        let report = report?;
        let line = if json {
            serde_json::to_string(&report).expect("reports serialize")
        } else {
            let mut text = String::new();
            for c in &report.checks {
                let tag = if c.pass { "PASS" } else { "FAIL" };
                text.push_str(&format!(
                    "{tag} {}: {} (expected {}, got {})\n",
                    report.case_name, c.label, c.expected, c.value
                ));
            }
            for n in &report.notes {
                text.push_str(&format!("NOTE {}: {n}\n", report.case_name));
            }
            text.trim_end().to_owned()
        };
        writeln!(out, "{line}").map_err(|source| CliError::Write {
            path: "stdout".into(),
            source,
        })?;
        if !report.all_pass {
            failing.push(report.case_name);
        }
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(format!(
            "failing cases: {}",
            failing.join(", ")
        )))
    }
}

fn fuzz_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("EXTERNREG_SEED") {
        Ok(text) => text.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "EXTERNREG_SEED={text:?} is not an unsigned integer"
            ))
        }),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Eval {
            source,
            policy,
            mode,
            tie,
        } => {
            policy.validate()?;
            if !(0.0..=1.0).contains(&tie) {
                return Err(CliError::Usage(format!("--tie {tie} must lie in [0, 1]")));
            }
            let pop = population(&source)?;
            print_json(&evaluate_with_tie(&pop, &policy, mode.into(), tie))
        }
        Command::Optimize {
            source,
            family,
            solver,
        } => cmd_optimize(&source, family, &solver),
        Command::Approx { source, policy } => cmd_approx(&source, &policy),
        Command::Sweep {
            values,
            effs,
            fines,
            costs,
            mode,
            out,
            sequential,
        } => {
            let spec = SweepSpec {
                values,
                efficiencies: effs,
                fines: fines.0,
                costs: costs.0,
                mode: mode.into(),
            };
            let rows = run_sweep(&spec, execution(sequential))?;
            write_csv(&rows, out.as_deref())
        }
        Command::Cutoff { source } => {
            let inst = instance(&source)?;
            print_json(&cutoff_t(inst.population().values(), inst.profit_floor())?)
        }
        Command::Casebook { case, x, json } => cmd_casebook(&case, x, json),
        Command::Fuzz {
            trials,
            seed,
            profile,
            sequential,
        } => {
            let seed = fuzz_seed(seed)?;
            let profile = match profile {
                FuzzProfile::Standard => Profile::Standard,
                FuzzProfile::HeavyTail => Profile::HeavyTail,
            };
            let report = fuzz_theorem(trials, seed, profile, execution(sequential))?;
            print_json(&report)?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::ChecksFailed(format!(
                    "{} trials violate the guarantee",
                    report.failures.len()
                )))
            }
        }
        Command::Revenue {
            source,
            y,
            c,
            format,
        } => {
            let table = revenue_table(&population(&source)?, y, c)?;
            match format {
                TableFormat::Json => print_json(&serde_json::json!({
                    "table": table,
                    "best_response": table.best_response(),
                })),
                TableFormat::Csv => write_csv(&table.rows, None),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed downstream pipe (`| head`) is not a failure.
        Err(CliError::Write { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
