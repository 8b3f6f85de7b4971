//! Argument parsing and output plumbing.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::{self, CliError, Outcome};
use crate::fmt::round_json;
use crate::problem_file::ProblemFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fracvar", version, about = "Variable-order fractional variational problems")]
pub struct Cli {
    /// Problem file (TOML).
    #[arg(long, global = true)]
    pub problem: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Record)]
    pub format: Format,
    /// Pass threshold for `check` (default 1e-3) and `verify-ibp` (default 5e-3).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Overrides `numerics.quadrature.cells`.
    #[arg(long, global = true)]
    pub quad_cells: Option<usize>,
    /// Overrides `numerics.quadrature.grading`.
    #[arg(long, global = true)]
    pub quad_grading: Option<f64>,
    /// Overrides `numerics.solver.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderChoice {
    Alpha,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormChoice {
    Ct1,
    Ct2,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Tabulate one operator along a trajectory.
    EvalOp(EvalOpArgs),
    /// Evaluate the functional at a candidate.
    EvalFunctional(CandidateArgs),
    /// Residuals of the necessary optimality conditions at a candidate.
    Check(CheckArgs),
    /// Minimise the functional over trajectories and terminal time.
    Solve(SolveArgs),
    /// Residuals of the two integration-by-parts identities.
    VerifyIbp(IbpArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EvalOp(_) => "eval-op",
            Command::EvalFunctional(_) => "eval-functional",
            Command::Check(_) => "check",
            Command::Solve(_) => "solve",
            Command::VerifyIbp(_) => "verify-ibp",
        }
    }
}

/// Trajectories are expressions in `t` or `@file.csv` with `t,x` rows.
#[derive(Debug, clap::Args, Serialize)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub x: String,
    /// Closed-form derivative of `x`; finite differences otherwise.
    #[arg(long)]
    pub dx: Option<String>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct EvalOpArgs {
    /// Operator, e.g. `combined_caputo` or `left-rl-integral`.
    #[arg(long)]
    pub kind: String,
    #[command(flatten)]
    pub traj: TrajectoryArgs,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    pub grid: String,
    /// Order of one-sided operators.
    #[arg(long, value_enum)]
    pub order: Option<OrderChoice>,
    /// Terminal time for `dual_derivative`.
    #[arg(long = "T")]
    pub t_end: Option<f64>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct CandidateArgs {
    #[command(flatten)]
    pub traj: TrajectoryArgs,
    #[arg(long = "T")]
    pub t_end: f64,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct CheckArgs {
    #[command(flatten)]
    pub candidate: CandidateArgs,
    /// Transversality form used with a free end point.
    #[arg(long, value_enum, default_value_t = FormChoice::Ct1)]
    pub form: FormChoice,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SolveArgs {
    /// Also write the solution as `t,x` CSV here.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct IbpArgs {
    #[arg(long)]
    pub x: String,
    #[arg(long)]
    pub dx: Option<String>,
    #[arg(long)]
    pub y: String,
    #[arg(long, value_enum, default_value_t = OrderChoice::Alpha)]
    pub order: OrderChoice,
}

/// Runs the program on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(cli: &Cli) -> Result<ProblemFile, CliError> {
    let path = cli
        .problem
        .as_ref()
        .ok_or_else(|| CliError::Input("--problem is required".into()))?;
    let mut file = ProblemFile::load(path).map_err(|e| CliError::Input(e.to_string()))?;
    let s = &mut file.settings;
    if let Some(cells) = cli.quad_cells {
        s.quadrature.cells = cells;
    }
    if let Some(grading) = cli.quad_grading {
        s.quadrature.grading = grading;
    }
    if let Some(seed) = cli.seed {
        s.solver.seed = seed;
    }
    s.quadrature.validate()?;
    if let Some(tol) = cli.tol {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(CliError::Input(format!("--tol must be a finite non-negative number, got {tol}")));
        }
    }
    Ok(file)
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let file = load(cli)?;
    let start = Instant::now();
    let outcome: Outcome = match &cli.command {
        Command::EvalOp(a) => commands::eval_op(&file, a)?,
        Command::EvalFunctional(a) => commands::eval_functional(&file, a)?,
        Command::Check(a) => commands::check(&file, a, cli.tol.unwrap_or(1e-3))?,
        Command::Solve(a) => commands::solve(&file, a)?,
        Command::VerifyIbp(a) => commands::verify_ibp(&file, a, cli.tol.unwrap_or(5e-3))?,
    };
    let elapsed = start.elapsed().as_secs_f64();

    for (path, text) in &outcome.files {
        std::fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    let text = match cli.format {
        Format::Csv => outcome.csv.clone(),
        Format::Record => {
            let mut record = record(cli, &file, &outcome);
            record["wall_time_s"] = json!(elapsed);
            let mut s = serde_json::to_string_pretty(&record).expect("records are plain JSON");
            s.push('\n');
            s
        }
    };
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(outcome.exit_code)
}

/// The result record without wall-clock time, which is the only field that
/// may differ between identical runs.
pub fn record(cli: &Cli, file: &ProblemFile, outcome: &Outcome) -> Value {
    let mut record = json!({
        "command": cli.command.name(),
        "args": &cli.command,
        "config": {
            "problem": &file.path,
            "problem_summary": commands::problem_summary(&file.problem),
            "numerics": &file.settings,
            "tol": cli.tol,
        },
        "result": &outcome.result,
        "passed": outcome.exit_code == EXIT_OK,
        "warnings": &outcome.warnings,
        "version": env!("CARGO_PKG_VERSION"),
    });
    round_json(&mut record);
    record
}
