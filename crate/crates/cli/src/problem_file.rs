//! TOML problem files.
//!
//! ```toml
//! [interval]
//! a = 0.0
//! b = 10.0
//!
//! [boundary]            # optional, x_a = 0
//! x_a = 0.0
//!
//! [orders]
//! alpha = "t^2/2"
//! beta = "(tau + 1)/12"
//! enforce_on = [0.0, 1.4]   # optional
//!
//! [weights]             # optional, 1/2 and 1/2
//! gamma1 = 0.5
//! gamma2 = 0.5
//!
//! [lagrangian]
//! L = "v^2"
//! d2 = "0"              # optional
//! d3 = "2*v"            # optional
//!
//! [terminal]            # optional, phi = 0 and a free end point
//! phi = "0"
//! constraint = "free"   # or "vertical:1", "horizontal:0.5", "curve:T^2"
//!
//! [numerics.quadrature]   # every [numerics.*] table is optional
//! [numerics.finite_difference]
//! [numerics.solver]
//! [numerics.check]
//! ```

use std::fmt;
use std::ops::Range;
use std::path::Path;

use fracvar_core::expr::Expr;
use fracvar_core::fracops::{GammaWeights, NumericsConfig, OrderFunction};
use fracvar_core::numerics::{FiniteDiffConfig, QuadratureConfig};
use fracvar_core::solver::SolverConfig;
use fracvar_core::varcalc::{CheckConfig, Lagrangian, Problem, TerminalConstraint, TerminalCost};
use fracvar_core::Error;
use serde::{Deserialize, Serialize};
use toml::Spanned;

/// One problem-file diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// Dotted key path, empty for whole-file errors.
    pub key: String,
    /// 1-based line and column in the file, when known.
    pub location: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some((line, col)) = self.location {
            write!(f, "line {line}, column {col}: ")?;
        }
        if !self.key.is_empty() {
            write!(f, "{}: ", self.key)?;
        }
        f.write_str(&self.message)
    }
}

/// Every problem found in a file; nothing is computed when this is returned.
#[derive(Debug, Clone, PartialEq)]
pub struct FileErrors {
    pub path: String,
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for FileErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error(s) in {}", self.diagnostics.len(), self.path)?;
        for d in &self.diagnostics {
            write!(f, "\n  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for FileErrors {}

type Text = Spanned<String>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    interval: RawInterval,
    #[serde(default)]
    boundary: RawBoundary,
    orders: RawOrders,
    #[serde(default)]
    weights: RawWeights,
    lagrangian: RawLagrangian,
    #[serde(default)]
    terminal: RawTerminal,
    #[serde(default)]
    numerics: RawNumerics,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterval {
    a: f64,
    b: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    #[serde(default)]
    x_a: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOrders {
    alpha: Text,
    beta: Text,
    enforce_on: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    gamma1: f64,
    gamma2: f64,
}

impl Default for RawWeights {
    fn default() -> Self {
        Self { gamma1: 0.5, gamma2: 0.5 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLagrangian {
    #[serde(rename = "L")]
    l: Text,
    d2: Option<Text>,
    d3: Option<Text>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerminal {
    phi: Option<Text>,
    d1: Option<Text>,
    d2: Option<Text>,
    constraint: Option<Text>,
    dpsi: Option<Text>,
}

/// Tunables read from `[numerics.*]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawNumerics {
    pub quadrature: QuadratureConfig,
    pub finite_difference: FiniteDiffConfig,
    pub solver: SolverConfig,
    pub check: CheckKnobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckKnobs {
    pub grid_points: usize,
    pub sweep_points: usize,
}

impl Default for CheckKnobs {
    fn default() -> Self {
        let c = CheckConfig::default();
        Self {
            grid_points: c.grid_points,
            sweep_points: c.sweep_points,
        }
    }
}

/// A parsed and validated problem file.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub path: String,
    pub problem: Problem,
    pub settings: RawNumerics,
}

impl ProblemFile {
    pub fn numerics(&self) -> NumericsConfig {
        NumericsConfig {
            quad: self.settings.quadrature,
            fd: self.settings.finite_difference,
        }
    }

    pub fn check_config(&self) -> CheckConfig {
        CheckConfig {
            numerics: self.numerics(),
            grid_points: self.settings.check.grid_points,
            sweep_points: self.settings.check.sweep_points,
        }
    }

    pub fn load(path: &Path) -> Result<Self, FileErrors> {
        let name = path.display().to_string();
        let source = std::fs::read_to_string(path).map_err(|e| FileErrors {
            path: name.clone(),
            diagnostics: vec![Diagnostic {
                key: String::new(),
                location: None,
                message: format!("cannot read file: {e}"),
            }],
        })?;
        Self::parse(&source, &name)
    }

    pub fn parse(source: &str, path: &str) -> Result<Self, FileErrors> {
        let fail = |diagnostics| FileErrors {
            path: path.to_string(),
            diagnostics,
        };
        let raw: RawFile = toml::from_str(source).map_err(|e| {
            fail(vec![Diagnostic {
                key: String::new(),
                location: e.span().map(|s| line_col(source, s.start)),
                message: e.message().trim().to_string(),
            }])
        })?;
        build(raw, source).map(|(problem, settings)| ProblemFile {
            path: path.to_string(),
            problem,
            settings,
        })
        .map_err(fail)
    }
}

pub fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

struct Collector<'a> {
    source: &'a str,
    diagnostics: Vec<Diagnostic>,
}

impl Collector<'_> {
    fn push(&mut self, key: &str, span: Option<Range<usize>>, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            key: key.to_string(),
            location: span.map(|s| line_col(self.source, s.start)),
            message: message.into(),
        });
    }

    fn expr(&mut self, key: &str, text: &Text) -> Option<Expr> {
        match Expr::parse(text.get_ref()) {
            Ok(e) => Some(e),
            Err(err) => {
                self.push(key, Some(text.span()), format!("in `{}`: {err}", text.get_ref()));
                None
            }
        }
    }

    fn opt_expr(&mut self, key: &str, text: &Option<Text>) -> Option<Option<Expr>> {
        match text {
            None => Some(None),
            Some(t) => self.expr(key, t).map(Some),
        }
    }

    fn semantic<T>(&mut self, key: &str, span: Option<Range<usize>>, r: Result<T, Error>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(key, span, e.to_string());
                None
            }
        }
    }
}

enum RawConstraint {
    Free,
    Vertical(f64),
    Horizontal(f64),
    Curve(Expr),
}

fn constraint_kind(c: &mut Collector, text: &Text) -> Option<RawConstraint> {
    let s = text.get_ref().trim();
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k.trim(), Some(a.trim())),
        None => (s, None),
    };
    let number = |c: &mut Collector, a: Option<&str>| match a.map(str::parse::<f64>) {
        Some(Ok(v)) if v.is_finite() => Some(v),
        _ => {
            c.push("terminal.constraint", Some(text.span()), format!("`{kind}` needs a finite number after `:`"));
            None
        }
    };
    match (kind, arg) {
        ("free", None) => Some(RawConstraint::Free),
        ("vertical", a) => number(c, a).map(RawConstraint::Vertical),
        ("horizontal", a) => number(c, a).map(RawConstraint::Horizontal),
        ("curve", Some(a)) => match Expr::parse(a) {
            Ok(e) => Some(RawConstraint::Curve(e)),
            Err(err) => {
                c.push("terminal.constraint", Some(text.span()), format!("in curve `{a}`: {err}"));
                None
            }
        },
        _ => {
            c.push(
                "terminal.constraint",
                Some(text.span()),
                format!("expected free, vertical:<T>, horizontal:<x>, or curve:<expr>, got `{s}`"),
            );
            None
        }
    }
}

fn build(raw: RawFile, source: &str) -> Result<(Problem, RawNumerics), Vec<Diagnostic>> {
    let mut c = Collector {
        source,
        diagnostics: Vec::new(),
    };

    // Syntax of every expression first.
    let alpha = c.expr("orders.alpha", &raw.orders.alpha);
    let beta = c.expr("orders.beta", &raw.orders.beta);
    let l = c.expr("lagrangian.L", &raw.lagrangian.l);
    let d2 = c.opt_expr("lagrangian.d2", &raw.lagrangian.d2);
    let d3 = c.opt_expr("lagrangian.d3", &raw.lagrangian.d3);
    let phi = c.opt_expr("terminal.phi", &raw.terminal.phi);
    let phi1 = c.opt_expr("terminal.d1", &raw.terminal.d1);
    let phi2 = c.opt_expr("terminal.d2", &raw.terminal.d2);
    let dpsi = c.opt_expr("terminal.dpsi", &raw.terminal.dpsi);
    let constraint = match &raw.terminal.constraint {
        None => Some(RawConstraint::Free),
        Some(t) => constraint_kind(&mut c, t),
    };

    // Plain numeric checks.
    let (a, b) = (raw.interval.a, raw.interval.b);
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        c.push("interval", None, format!("need finite a < b, got a = {a}, b = {b}"));
    }
    let enforce_on = raw.orders.enforce_on.map(|[lo, hi]| (lo, hi));
    if let Some((lo, hi)) = enforce_on {
        if !(a <= lo && lo < hi && hi <= b) {
            c.push("orders.enforce_on", None, format!("[{lo}, {hi}] must be a sub-interval of [{a}, {b}]"));
        }
    }
    let weights = c.semantic("weights", None, GammaWeights::new(raw.weights.gamma1, raw.weights.gamma2));
    let n = raw.numerics;
    c.semantic("numerics.quadrature", None, n.quadrature.validate());
    c.semantic("numerics.finite_difference", None, n.finite_difference.validate());
    c.semantic("numerics.solver", None, n.solver.validate());
    let check = CheckConfig {
        numerics: NumericsConfig::default(),
        grid_points: n.check.grid_points,
        sweep_points: n.check.sweep_points,
    };
    c.semantic("numerics.check", None, check.validate());
    if !c.diagnostics.is_empty() {
        return Err(c.diagnostics);
    }

    // Semantic construction; each piece is attempted so all errors surface.
    let window = enforce_on.unwrap_or((a, b));
    let span = |t: &Text| Some(t.span());
    let alpha = c.semantic("orders.alpha", span(&raw.orders.alpha), OrderFunction::new(alpha.unwrap(), window));
    let beta = c.semantic("orders.beta", span(&raw.orders.beta), OrderFunction::new(beta.unwrap(), window));
    let lagrangian = c.semantic(
        "lagrangian",
        span(&raw.lagrangian.l),
        Lagrangian::new(l.unwrap(), d2.unwrap(), d3.unwrap(), window),
    );
    let terminal_cost = match phi.unwrap() {
        None => {
            if raw.terminal.d1.is_some() || raw.terminal.d2.is_some() {
                c.push("terminal", None, "d1/d2 given without phi");
            }
            Some(TerminalCost::zero())
        }
        Some(phi) => c.semantic(
            "terminal.phi",
            raw.terminal.phi.as_ref().map(Spanned::span),
            TerminalCost::new(phi, phi1.unwrap(), phi2.unwrap(), window),
        ),
    };
    let constraint_span = raw.terminal.constraint.as_ref().map(Spanned::span);
    let constraint = match constraint.unwrap() {
        RawConstraint::Free => Some(TerminalConstraint::Free),
        RawConstraint::Vertical(t_end) => Some(TerminalConstraint::VerticalLine { t_end }),
        RawConstraint::Horizontal(x_end) => Some(TerminalConstraint::HorizontalLine { x_end }),
        RawConstraint::Curve(psi) => c.semantic(
            "terminal.constraint",
            constraint_span.clone(),
            TerminalConstraint::curve(psi, dpsi.unwrap(), window),
        ),
    };
    if raw.terminal.dpsi.is_some() && !matches!(constraint, Some(TerminalConstraint::Curve { .. })) {
        c.push("terminal.dpsi", None, "dpsi is only meaningful with a curve constraint");
    }
    if !c.diagnostics.is_empty() {
        return Err(c.diagnostics);
    }
    let problem = Problem {
        a,
        b,
        x_a: raw.boundary.x_a,
        alpha: alpha.unwrap(),
        beta: beta.unwrap(),
        weights: weights.unwrap(),
        lagrangian: lagrangian.unwrap(),
        terminal_cost: terminal_cost.unwrap(),
        constraint: constraint.unwrap(),
        enforce_on,
    };
    c.semantic("", constraint_span, problem.validate());
    if c.diagnostics.is_empty() {
        Ok((problem, n))
    } else {
        Err(c.diagnostics)
    }
}
