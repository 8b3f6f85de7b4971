//! The five user commands. Each returns an [`Outcome`]; formatting and exit
//! codes live in [`crate::app`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fracvar_core::fracops::{
    combined_caputo, combined_rl, dual_derivative, left_caputo, left_rl_derivative, left_rl_integral,
    right_caputo, right_rl_derivative, right_rl_integral, OpValue, OperatorKind, OrderFunction, Span,
    Trajectory,
};
use fracvar_core::solver;
use fracvar_core::varcalc::{self, Candidate, CtForm, Problem, TerminalConstraint};
use fracvar_core::Error;
use serde_json::{json, Value};

use crate::app::{CandidateArgs, CheckArgs, EvalOpArgs, FormChoice, IbpArgs, OrderChoice, SolveArgs, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK};
use crate::fmt::num;
use crate::problem_file::ProblemFile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub result: Value,
    pub csv: String,
    pub warnings: Vec<String>,
    pub exit_code: i32,
    /// Side files requested by the command.
    pub files: Vec<(PathBuf, String)>,
}

impl Outcome {
    fn new(result: Value, csv: String) -> Self {
        Self {
            result,
            csv,
            warnings: Vec::new(),
            exit_code: EXIT_OK,
            files: Vec::new(),
        }
    }
}

pub fn problem_summary(p: &Problem) -> Value {
    let constraint = match &p.constraint {
        TerminalConstraint::Free => "free".to_string(),
        TerminalConstraint::VerticalLine { t_end } => format!("vertical:{}", num(*t_end)),
        TerminalConstraint::HorizontalLine { x_end } => format!("horizontal:{}", num(*x_end)),
        TerminalConstraint::Curve { psi, .. } => format!("curve:{psi}"),
    };
    json!({
        "a": p.a,
        "b": p.b,
        "x_a": p.x_a,
        "alpha": p.alpha.expr().to_string(),
        "beta": p.beta.expr().to_string(),
        "gamma1": p.weights.gamma1,
        "gamma2": p.weights.gamma2,
        "enforce_on": p.enforce_on.map(|(lo, hi)| [lo, hi]),
        "constraint": constraint,
    })
}

/// Reads a `t,x` CSV file; a non-numeric first row is taken as a header.
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory, CliError> {
    let bad = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let (mut grid, mut values) = (Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let parsed = match (row.len(), row.get(0), row.get(1)) {
            (2, Some(t), Some(x)) => t.parse::<f64>().ok().zip(x.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((t, x)) => {
                grid.push(t);
                values.push(x);
            }
            None if i == 0 => {}
            None => return Err(bad(format!("row {}: expected `t,x`", i + 1))),
        }
    }
    Ok(Trajectory::piecewise_linear(grid, values)?)
}

/// `@path` loads a piecewise-linear trajectory, anything else is an expression in `t`.
pub fn trajectory(spec: &str, dx: Option<&str>, p: &Problem) -> Result<Trajectory, CliError> {
    match spec.strip_prefix('@') {
        Some(path) => {
            if dx.is_some() {
                return Err(CliError::Input("--dx cannot be combined with a CSV trajectory".into()));
            }
            read_trajectory_csv(Path::new(path))
        }
        None => Ok(Trajectory::parse(spec, dx, (p.a, p.b))?),
    }
}

/// `start:stop:step` (inclusive) or `t1,t2,...`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Input(format!("bad --grid `{spec}`: {why}"));
    let number = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let points = if spec.contains(':') {
        let parts: Vec<_> = spec.split(':').map(number).collect();
        let [Some(start), Some(stop), Some(step)] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        if !(step > 0.0) || stop < start {
            return Err(bad("need step > 0 and start <= stop"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        if n > 1_000_000 {
            return Err(bad("more than a million points"));
        }
        (0..=n).map(|i| crate::fmt::round(start + i as f64 * step)).collect()
    } else {
        spec.split(',')
            .map(|s| number(s).ok_or_else(|| bad("expected comma-separated numbers")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if points.is_empty() {
        return Err(bad("no points"));
    }
    Ok(points)
}

fn order<'a>(p: &'a Problem, choice: OrderChoice) -> &'a OrderFunction {
    match choice {
        OrderChoice::Alpha => &p.alpha,
        OrderChoice::Beta => &p.beta,
    }
}

pub fn eval_op(file: &ProblemFile, args: &EvalOpArgs) -> Result<Outcome, CliError> {
    let p = &file.problem;
    let kind = OperatorKind::from_name(&args.kind).ok_or_else(|| {
        let names: Vec<_> = OperatorKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Input(format!("unknown operator `{}`; expected one of {}", args.kind, names.join(", ")))
    })?;
    if kind.is_combined() && args.order.is_some() {
        return Err(CliError::Input(format!("--order does not apply to {kind}, which uses both orders")));
    }
    let t_end = match (kind, args.t_end) {
        (OperatorKind::DualDerivative, Some(t)) => t,
        (OperatorKind::DualDerivative, None) => return Err(CliError::Input("dual_derivative needs --T".into())),
        (_, Some(_)) => return Err(CliError::Input(format!("--T only applies to dual_derivative, not {kind}"))),
        (_, None) => p.b,
    };
    if !(p.a < t_end && t_end <= p.b) {
        return Err(CliError::Input(format!("T = {t_end} is outside ({}, {}]", p.a, p.b)));
    }
    let x = trajectory(&args.traj.x, args.traj.dx.as_deref(), p)?;
    let grid = parse_grid(&args.grid)?;
    let ord = order(p, args.order.unwrap_or(OrderChoice::Alpha));
    let cfg = file.numerics();
    let span = Span { a: p.a, b: p.b };

    let mut rows = Vec::with_capacity(grid.len());
    for &t in &grid {
        let v: OpValue = match kind {
            OperatorKind::LeftRlIntegral => left_rl_integral(&x, ord, p.a, t, &cfg),
            OperatorKind::RightRlIntegral => right_rl_integral(&x, ord, t, p.b, &cfg),
            OperatorKind::LeftRlDerivative => left_rl_derivative(&x, ord, p.a, t, &cfg),
            OperatorKind::RightRlDerivative => right_rl_derivative(&x, ord, t, p.b, &cfg),
            OperatorKind::LeftCaputo => left_caputo(&x, ord, p.a, t, &cfg),
            OperatorKind::RightCaputo => right_caputo(&x, ord, t, p.b, &cfg),
            OperatorKind::CombinedRl => combined_rl(&x, &p.alpha, &p.beta, p.weights, span, t, &cfg),
            OperatorKind::CombinedCaputo => combined_caputo(&x, &p.alpha, &p.beta, p.weights, span, t, &cfg),
            OperatorKind::DualDerivative => dual_derivative(&x, &p.alpha, &p.beta, p.weights, p.a, t_end, t, &cfg),
        }
        .map_err(|e| annotate(e, t))?;
        rows.push((t, v));
    }

    let mut csv = String::from("t,value,warn\n");
    for (t, v) in &rows {
        let _ = writeln!(csv, "{},{},{}", num(*t), num(v.value), u8::from(!v.converged));
    }
    let unconverged = rows.iter().filter(|(_, v)| !v.converged).count();
    let result = json!({
        "kind": kind.name(),
        "t": rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        "value": rows.iter().map(|r| r.1.value).collect::<Vec<_>>(),
        "warn": rows.iter().map(|r| !r.1.converged).collect::<Vec<_>>(),
    });
    let mut out = Outcome::new(result, csv);
    if unconverged > 0 {
        out.warnings.push(format!("{unconverged} of {} points did not reach the quadrature tolerance", rows.len()));
    }
    Ok(out)
}

fn annotate(e: Error, t: f64) -> CliError {
    let input = e.is_input_error();
    let msg = format!("at t = {}: {e}", num(t));
    if input {
        CliError::Input(msg)
    } else {
        CliError::Numeric(msg)
    }
}

fn candidate(file: &ProblemFile, args: &CandidateArgs) -> Result<Candidate, CliError> {
    let p = &file.problem;
    if !(p.a < args.t_end && args.t_end <= p.b) {
        return Err(CliError::Input(format!("T = {} is outside ({}, {}]", args.t_end, p.a, p.b)));
    }
    let x = trajectory(&args.traj.x, args.traj.dx.as_deref(), p)?;
    let c = Candidate { x, t_end: args.t_end };
    p.validate_candidate(&c)?;
    Ok(c)
}

fn kv_csv(pairs: &[(&str, f64)]) -> String {
    let mut csv = String::from("quantity,value\n");
    for (k, v) in pairs {
        let _ = writeln!(csv, "{k},{}", num(*v));
    }
    csv
}

pub fn eval_functional(file: &ProblemFile, args: &CandidateArgs) -> Result<Outcome, CliError> {
    let p = &file.problem;
    let c = candidate(file, args)?;
    let eval = varcalc::functional(p, &c, &file.numerics())?;
    let phi = p.terminal_cost.value(c.t_end, c.x.value(c.t_end)?)?;
    let integral = eval.value - phi;
    let result = json!({
        "J": eval.value,
        "integral": integral,
        "phi": phi,
        "T": c.t_end,
        "x_T": c.x.value(c.t_end)?,
    });
    let csv = kv_csv(&[("J", eval.value), ("integral", integral), ("phi", phi)]);
    let mut out = Outcome::new(result, csv);
    out.warnings = eval.warnings;
    Ok(out)
}

fn report_csv(report: &varcalc::ConditionReport) -> String {
    let mut csv = String::from("part,t,residual\n");
    for (t, r) in &report.el_interior {
        let _ = writeln!(csv, "el_interior,{},{}", num(*t), num(*r));
    }
    for (t, r) in &report.el_tail {
        let _ = writeln!(csv, "el_tail,{},{}", num(*t), num(*r));
    }
    for (i, r) in report.ct.iter().enumerate() {
        let _ = writeln!(csv, "{}[{i}],,{}", report.ct_kind, num(*r));
    }
    csv
}

pub fn check(file: &ProblemFile, args: &CheckArgs, tol: f64) -> Result<Outcome, CliError> {
    let c = candidate(file, &args.candidate)?;
    let form = match args.form {
        FormChoice::Ct1 => CtForm::Ct1,
        FormChoice::Ct2 => CtForm::Ct2,
    };
    let report = varcalc::check(&file.problem, &c, &file.check_config(), form)?;
    let passed = report.max_abs <= tol;
    let mut out = Outcome::new(
        json!({ "report": &report, "tol": tol, "passed": passed }),
        report_csv(&report),
    );
    out.warnings = report.warnings.clone();
    if !passed {
        out.exit_code = EXIT_CHECK_FAILED;
    }
    Ok(out)
}

pub fn solve(file: &ProblemFile, args: &SolveArgs) -> Result<Outcome, CliError> {
    let sol = solver::solve(&file.problem, &file.settings.solver, &file.numerics())?;
    let pl = sol
        .candidate
        .x
        .as_piecewise_linear()
        .ok_or_else(|| CliError::Numeric("solver returned a non-grid trajectory".into()))?;
    let mut csv = String::from("t,x\n");
    for (t, x) in pl.grid().iter().zip(pl.values()) {
        let _ = writeln!(csv, "{},{}", num(*t), num(*x));
    }
    let result = json!({
        "J": sol.j,
        "objective": sol.objective,
        "T": sol.candidate.t_end,
        "x_T": pl.value(sol.candidate.t_end)?,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "trajectory": { "t": pl.grid(), "x": pl.values() },
        "history": &sol.history,
        "runs": &sol.runs,
        "report": &sol.report,
    });
    let mut out = Outcome::new(result, csv.clone());
    out.warnings = sol.report.warnings.clone();
    if !sol.converged {
        out.warnings.push("solver stopped at max_iters before the step fell below its floor".into());
    }
    if let Some(path) = &args.trajectory {
        out.files.push((path.clone(), csv));
    }
    Ok(out)
}

pub fn verify_ibp(file: &ProblemFile, args: &IbpArgs, tol: f64) -> Result<Outcome, CliError> {
    let p = &file.problem;
    let x = trajectory(&args.x, args.dx.as_deref(), p)?;
    let y = trajectory(&args.y, None, p)?;
    let (lo, hi) = p.window();
    let r = varcalc::ibp_check(&x, &y, order(p, args.order), lo, hi, &file.numerics())?;
    let passed = r.residual_left <= tol && r.residual_right <= tol;
    let csv = kv_csv(&[
        ("residual_left", r.residual_left),
        ("residual_right", r.residual_right),
        ("lhs_left", r.lhs_left),
        ("rhs_left", r.rhs_left),
        ("lhs_right", r.lhs_right),
        ("rhs_right", r.rhs_right),
    ]);
    let mut out = Outcome::new(
        json!({ "ibp": r, "interval": [lo, hi], "tol": tol, "passed": passed }),
        csv,
    );
    if !r.converged {
        out.warnings.push("some inner quadratures did not reach rel_tol".into());
    }
    if !passed {
        out.exit_code = EXIT_CHECK_FAILED;
    }
    Ok(out)
}

