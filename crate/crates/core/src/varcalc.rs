//! The free-terminal-time functional `J(x, T) = int_a^T L(t, x, v) dt + phi(T, x(T))`
//! with `v` the combined Caputo derivative on `[a, b]`, and the residuals of
//! its necessary optimality conditions.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var, VarBindings};
use crate::fracops::{
    combined_caputo, dual_derivative, left_caputo, left_rl_derivative, left_rl_derivative_clamped,
    left_rl_integral, right_rl_derivative_clamped, right_rl_integral, textbook_right_caputo,
    uniform_grid, CaputoWeights, GammaWeights, NumericsConfig, OpValue, OrderFunction,
    PiecewiseLinear, Span, Trajectory,
};
use crate::numerics::{central_diff, simpson, singular_integral, FiniteDiffConfig};

const CONSISTENCY_POINTS: usize = 20;
const CONSISTENCY_TOL: f64 = 1e-4;
const CONSISTENCY_SEED: u64 = 0x5eed_0f_d1ff;
/// Tolerance on the boundary condition `x(a) = x_a`.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// A partial derivative given explicitly or left to central differences.
#[derive(Debug, Clone, PartialEq)]
struct Partial {
    expr: Option<Expr>,
}

fn bindings(pairs: &[(Var, f64)]) -> VarBindings {
    pairs.iter().fold(VarBindings::new(), |b, &(v, x)| b.with(v, x))
}

/// Checks `d` against central differences of `f` in coordinate `slot` at
/// seeded random points drawn by `draw`.
fn check_partial(
    f: &Expr,
    d: &Expr,
    vars: &[Var],
    slot: usize,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    what: &str,
) -> Result<()> {
    let fd = FiniteDiffConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(CONSISTENCY_SEED);
    let mut checked = 0;
    for _ in 0..10 * CONSISTENCY_POINTS {
        if checked == CONSISTENCY_POINTS {
            break;
        }
        let point = draw(&mut rng);
        let at = |u: f64| {
            let mut p = point.clone();
            p[slot] = u;
            let pairs: Vec<_> = vars.iter().copied().zip(p).collect();
            f.eval(&bindings(&pairs))
        };
        let numeric = match central_diff(at, point[slot], &fd) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let pairs: Vec<_> = vars.iter().copied().zip(point.iter().copied()).collect();
        let Ok(given) = d.eval(&bindings(&pairs)) else {
            continue;
        };
        checked += 1;
        if (numeric - given).abs() > CONSISTENCY_TOL * given.abs().max(1.0) {
            return Err(Error::Consistency(format!(
                "{what} `{d}` = {given} but the central difference of `{f}` is {numeric} at {pairs:?}"
            )));
        }
    }
    if checked < CONSISTENCY_POINTS {
        return Err(Error::Consistency(format!(
            "{what}: could only evaluate `{f}` at {checked} of {CONSISTENCY_POINTS} sample points"
        )));
    }
    Ok(())
}

/// `L(t, x, v)` with optional partials in `x` and `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lagrangian {
    l: Expr,
    d2: Partial,
    d3: Partial,
    fd: FiniteDiffConfig,
}

impl Lagrangian {
    const VARS: [Var; 3] = [Var::Time, Var::State, Var::Deriv];

    /// Supplied partials are checked against central differences at 20 random
    /// points with `t` in `span` and `x, v` in `[-2, 2]`.
    pub fn new(l: Expr, d2: Option<Expr>, d3: Option<Expr>, span: (f64, f64)) -> Result<Self> {
        for e in std::iter::once(&l).chain(d2.iter()).chain(d3.iter()) {
            e.check_vars(&Self::VARS)?;
        }
        let draw = |rng: &mut ChaCha8Rng| {
            vec![
                rng.gen_range(span.0..=span.1),
                rng.gen_range(-2.0..=2.0),
                rng.gen_range(-2.0..=2.0),
            ]
        };
        if let Some(d) = &d2 {
            check_partial(&l, d, &Self::VARS, 1, draw, "d2 (dL/dx)")?;
        }
        if let Some(d) = &d3 {
            check_partial(&l, d, &Self::VARS, 2, draw, "d3 (dL/dv)")?;
        }
        Ok(Self {
            l,
            d2: Partial { expr: d2 },
            d3: Partial { expr: d3 },
            fd: FiniteDiffConfig::default(),
        })
    }

    pub fn parse(l: &str, d2: Option<&str>, d3: Option<&str>, span: (f64, f64)) -> Result<Self> {
        Self::new(
            Expr::parse(l)?,
            d2.map(Expr::parse).transpose()?,
            d3.map(Expr::parse).transpose()?,
            span,
        )
    }

    fn at(t: f64, x: f64, v: f64) -> VarBindings {
        bindings(&[(Var::Time, t), (Var::State, x), (Var::Deriv, v)])
    }

    pub fn value(&self, t: f64, x: f64, v: f64) -> Result<f64> {
        self.l.eval(&Self::at(t, x, v))
    }

    /// `L` with `t` substituted; see [`Lagrangian::value_folded`].
    pub fn at_time(&self, t: f64) -> Result<Expr> {
        self.l.fold(&VarBindings::new().with(Var::Time, t))
    }

    /// Same bits as [`Lagrangian::value`] for an expression from [`Lagrangian::at_time`].
    pub fn value_folded(folded: &Expr, x: f64, v: f64) -> Result<f64> {
        folded.eval(&bindings(&[(Var::State, x), (Var::Deriv, v)]))
    }

    pub fn d2(&self, t: f64, x: f64, v: f64) -> Result<f64> {
        match &self.d2.expr {
            Some(e) => e.eval(&Self::at(t, x, v)),
            None => central_diff(|u| self.value(t, u, v), x, &self.fd),
        }
    }

    pub fn d3(&self, t: f64, x: f64, v: f64) -> Result<f64> {
        match &self.d3.expr {
            Some(e) => e.eval(&Self::at(t, x, v)),
            None => central_diff(|u| self.value(t, x, u), v, &self.fd),
        }
    }
}

/// Terminal cost `phi(T, xT)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    phi: Expr,
    d1: Partial,
    d2: Partial,
    fd: FiniteDiffConfig,
}

impl TerminalCost {
    const VARS: [Var; 2] = [Var::Terminal, Var::TerminalState];

    pub fn new(phi: Expr, d1: Option<Expr>, d2: Option<Expr>, span: (f64, f64)) -> Result<Self> {
        for e in std::iter::once(&phi).chain(d1.iter()).chain(d2.iter()) {
            e.check_vars(&Self::VARS)?;
        }
        let draw = |rng: &mut ChaCha8Rng| vec![rng.gen_range(span.0..=span.1), rng.gen_range(-2.0..=2.0)];
        if let Some(d) = &d1 {
            check_partial(&phi, d, &Self::VARS, 0, draw, "d1 (dphi/dT)")?;
        }
        if let Some(d) = &d2 {
            check_partial(&phi, d, &Self::VARS, 1, draw, "d2 (dphi/dxT)")?;
        }
        Ok(Self {
            phi,
            d1: Partial { expr: d1 },
            d2: Partial { expr: d2 },
            fd: FiniteDiffConfig::default(),
        })
    }

    pub fn zero() -> Self {
        Self {
            phi: Expr::num(0.0),
            d1: Partial {
                expr: Some(Expr::num(0.0)),
            },
            d2: Partial {
                expr: Some(Expr::num(0.0)),
            },
            fd: FiniteDiffConfig::default(),
        }
    }

    pub fn parse(phi: &str, d1: Option<&str>, d2: Option<&str>, span: (f64, f64)) -> Result<Self> {
        Self::new(
            Expr::parse(phi)?,
            d1.map(Expr::parse).transpose()?,
            d2.map(Expr::parse).transpose()?,
            span,
        )
    }

    fn at(t: f64, x: f64) -> VarBindings {
        bindings(&[(Var::Terminal, t), (Var::TerminalState, x)])
    }

    pub fn value(&self, t: f64, x: f64) -> Result<f64> {
        self.phi.eval(&Self::at(t, x))
    }

    pub fn d1(&self, t: f64, x: f64) -> Result<f64> {
        match &self.d1.expr {
            Some(e) => e.eval(&Self::at(t, x)),
            None => central_diff(|u| self.value(u, x), t, &self.fd),
        }
    }

    pub fn d2(&self, t: f64, x: f64) -> Result<f64> {
        match &self.d2.expr {
            Some(e) => e.eval(&Self::at(t, x)),
            None => central_diff(|u| self.value(t, u), x, &self.fd),
        }
    }
}

/// How the terminal point `(T, x(T))` may move.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalConstraint {
    Free,
    /// `T` fixed.
    VerticalLine { t_end: f64 },
    /// `x(T)` fixed.
    HorizontalLine { x_end: f64 },
    /// `x(T) = psi(T)`.
    Curve { psi: Expr, dpsi: Option<Expr> },
}

impl TerminalConstraint {
    pub fn curve(psi: Expr, dpsi: Option<Expr>, span: (f64, f64)) -> Result<Self> {
        psi.check_vars(&[Var::Terminal])?;
        if let Some(d) = &dpsi {
            d.check_vars(&[Var::Terminal])?;
            let draw = |rng: &mut ChaCha8Rng| vec![rng.gen_range(span.0..=span.1)];
            check_partial(&psi, d, &[Var::Terminal], 0, draw, "dpsi")?;
        }
        Ok(TerminalConstraint::Curve { psi, dpsi })
    }

    pub fn name(&self) -> &'static str {
        match self {
            TerminalConstraint::Free => "free",
            TerminalConstraint::VerticalLine { .. } => "vertical",
            TerminalConstraint::HorizontalLine { .. } => "horizontal",
            TerminalConstraint::Curve { .. } => "curve",
        }
    }

    pub fn psi(&self, t: f64) -> Result<f64> {
        match self {
            TerminalConstraint::Curve { psi, .. } => psi.eval(&VarBindings::new().with(Var::Terminal, t)),
            _ => Err(Error::Problem("constraint is not a curve".into())),
        }
    }

    pub fn dpsi(&self, t: f64) -> Result<f64> {
        match self {
            TerminalConstraint::Curve { dpsi: Some(d), .. } => d.eval(&VarBindings::new().with(Var::Terminal, t)),
            TerminalConstraint::Curve { dpsi: None, .. } => {
                central_diff(|u| self.psi(u), t, &FiniteDiffConfig::default())
            }
            _ => Err(Error::Problem("constraint is not a curve".into())),
        }
    }
}

/// A fully specified variational problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub a: f64,
    pub b: f64,
    pub x_a: f64,
    pub alpha: OrderFunction,
    pub beta: OrderFunction,
    pub weights: GammaWeights,
    pub lagrangian: Lagrangian,
    pub terminal_cost: TerminalCost,
    pub constraint: TerminalConstraint,
    /// Sub-interval on which both orders are known to lie in `(0, 1)`.
    pub enforce_on: Option<(f64, f64)>,
}

impl Problem {
    /// Checks the interval, the order ranges on `enforce_on` (or `[a, b]`) and
    /// the constraint data.
    pub fn validate(&self) -> Result<()> {
        if !(self.a < self.b) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::Problem(format!("need finite a < b, got [{}, {}]", self.a, self.b)));
        }
        if !self.x_a.is_finite() {
            return Err(Error::Problem("x_a must be finite".into()));
        }
        if let Some((lo, hi)) = self.enforce_on {
            if !(self.a <= lo && lo < hi && hi <= self.b) {
                return Err(Error::Problem(format!(
                    "enforce_on [{lo}, {hi}] must be a sub-interval of [{}, {}]",
                    self.a, self.b
                )));
            }
        }
        let domain = self.window();
        self.alpha.validate_on(domain)?;
        self.beta.validate_on(domain)?;
        match &self.constraint {
            TerminalConstraint::VerticalLine { t_end } if !(domain.0 < *t_end && *t_end <= domain.1) => {
                Err(Error::Problem(format!(
                    "vertical line T = {t_end} lies outside ({}, {}]",
                    domain.0, domain.1
                )))
            }
            TerminalConstraint::HorizontalLine { x_end } if !x_end.is_finite() => {
                Err(Error::Problem("horizontal line target must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Where `t` and `T` may range: `enforce_on` if given, else `[a, b]`.
    pub fn window(&self) -> (f64, f64) {
        self.enforce_on.unwrap_or((self.a, self.b))
    }

    pub fn span(&self) -> Span {
        Span { a: self.a, b: self.b }
    }

    /// Upper end used for conditions stated on `[T, b]`.
    pub fn tail_end(&self) -> f64 {
        self.window().1
    }

    pub fn validate_candidate(&self, c: &Candidate) -> Result<()> {
        let xa = c.x.value(self.a)?;
        if (xa - self.x_a).abs() > BOUNDARY_TOL {
            return Err(Error::Problem(format!(
                "candidate violates x(a) = {}: x(a) = {xa}",
                self.x_a
            )));
        }
        let (lo, hi) = self.window();
        if !(self.a < c.t_end && c.t_end <= self.b) {
            return Err(Error::Problem(format!(
                "terminal time T = {} must lie in ({}, {}]",
                c.t_end, self.a, self.b
            )));
        }
        if !(lo <= c.t_end && c.t_end <= hi) {
            return Err(Error::Problem(format!(
                "terminal time T = {} lies outside the order-valid window [{lo}, {hi}]",
                c.t_end
            )));
        }
        Ok(())
    }
}

/// A pair `(x, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub x: Trajectory,
    pub t_end: f64,
}

/// The triple `(t, x(t), v(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointValue {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub converged: bool,
}

/// Caches, per `t`, the Caputo weights of one piecewise-linear grid and the
/// Lagrangian with `t` substituted.
#[derive(Debug, Default)]
pub struct WeightCache {
    grid: Vec<f64>,
    map: HashMap<u64, (CaputoWeights, Expr)>,
}

impl WeightCache {
    const CAPACITY: usize = 200_000;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// `L(t, x(t), v(t))` and whether `v` converged.
    fn lagrangian(&mut self, p: &Problem, pl: &PiecewiseLinear, slopes: &[f64], t: f64, cfg: &NumericsConfig) -> Result<(f64, bool)> {
        if self.grid != pl.grid() {
            self.grid = pl.grid().to_vec();
            self.map.clear();
        }
        if self.map.len() >= Self::CAPACITY {
            self.map.clear();
        }
        let (w, l) = match self.map.entry(t.to_bits()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert((
                CaputoWeights::compute(pl, &p.alpha, &p.beta, p.span(), t, &cfg.quad)?,
                p.lagrangian.at_time(t)?,
            )),
        };
        let v = w.combined(slopes, p.weights);
        Ok((Lagrangian::value_folded(l, pl.value(t)?, v.value)?, v.converged))
    }
}

/// `(t, x(t), v(t))` with `v` the combined Caputo derivative over all of `[a, b]`.
pub fn eval_point(p: &Problem, c: &Candidate, t: f64, cfg: &NumericsConfig) -> Result<PointValue> {
    if !(p.a <= t && t <= p.b) {
        return Err(Error::Problem(format!("t = {t} lies outside [{}, {}]", p.a, p.b)));
    }
    let v = combined_caputo(&c.x, &p.alpha, &p.beta, p.weights, p.span(), t, cfg)?;
    Ok(PointValue {
        t,
        x: c.x.value(t)?,
        v: v.value,
        converged: v.converged,
    })
}

/// A scalar result with quadrature diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub value: f64,
    pub warnings: Vec<String>,
}

const OUTER_PANELS: usize = 64;
const OUTER_DOUBLINGS: u32 = 4;

fn functional_impl(
    p: &Problem,
    c: &Candidate,
    cfg: &NumericsConfig,
    mut cache: Option<&mut WeightCache>,
) -> Result<Evaluation> {
    p.validate_candidate(c)?;
    let slopes = c.x.as_piecewise_linear().map(PiecewiseLinear::slopes);
    let mut unconverged = 0usize;
    let integral = simpson(
        |t| {
            let (l, converged) = match (&mut cache, c.x.as_piecewise_linear(), &slopes) {
                (Some(cache), Some(pl), Some(slopes)) => cache.lagrangian(p, pl, slopes, t, cfg)?,
                _ => {
                    let pv = eval_point(p, c, t, cfg)?;
                    (p.lagrangian.value(t, pv.x, pv.v)?, pv.converged)
                }
            };
            unconverged += usize::from(!converged);
            Ok(l)
        },
        p.a,
        c.t_end,
        OUTER_PANELS,
        cfg.quad.rel_tol,
        OUTER_DOUBLINGS,
    )?;
    let mut warnings = Vec::new();
    if unconverged > 0 {
        warnings.push(format!("{unconverged} inner Caputo quadratures did not converge"));
    }
    if !integral.stats.converged {
        warnings.push(format!(
            "outer Simpson rule did not reach rel_tol after {} panels",
            integral.stats.cells
        ));
    }
    let terminal = p.terminal_cost.value(c.t_end, c.x.value(c.t_end)?)?;
    Ok(Evaluation {
        value: integral.value + terminal,
        warnings,
    })
}

/// `J(x, T)`: adaptive composite Simpson on `[a, T]` plus the terminal cost.
pub fn functional(p: &Problem, c: &Candidate, cfg: &NumericsConfig) -> Result<Evaluation> {
    functional_impl(p, c, cfg, None)
}

/// Same value as [`functional`], bit for bit, reusing Caputo weights of
/// piecewise-linear candidates across calls.
pub fn functional_cached(
    p: &Problem,
    c: &Candidate,
    cfg: &NumericsConfig,
    cache: &mut WeightCache,
) -> Result<Evaluation> {
    functional_impl(p, c, cfg, Some(cache))
}

/// Settings for condition checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckConfig {
    pub numerics: NumericsConfig,
    /// Grid size on which `dL/dv` along the candidate is sampled.
    pub grid_points: usize,
    /// Points per residual sweep.
    pub sweep_points: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            numerics: NumericsConfig::default(),
            grid_points: 257,
            sweep_points: 50,
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<()> {
        self.numerics.validate()?;
        if self.grid_points < 3 {
            return Err(Error::Config("grid_points must be >= 3".into()));
        }
        if self.sweep_points < 1 {
            return Err(Error::Config("sweep_points must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which transversality conditions apply under a terminal constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialCase {
    Vertical,
    Horizontal,
    Curve,
}

/// Which general form of the transversality conditions to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CtForm {
    #[default]
    Ct1,
    Ct2,
}

/// Condition residuals at one candidate. `dL/dv` along the candidate is
/// sampled once on `[a, tail_end]` and reused by every residual.
pub struct Conditions<'a> {
    p: &'a Problem,
    c: &'a Candidate,
    cfg: CheckConfig,
    d3l: Trajectory,
    warnings: Vec<String>,
}

impl<'a> Conditions<'a> {
    pub fn new(p: &'a Problem, c: &'a Candidate, cfg: &CheckConfig) -> Result<Self> {
        cfg.validate()?;
        p.validate_candidate(c)?;
        let end = p.tail_end();
        let grid = uniform_grid(p.a, end, cfg.grid_points - 1);
        let mut values = Vec::with_capacity(grid.len());
        let mut unconverged = 0;
        for &t in &grid {
            let pv = eval_point(p, c, t, &cfg.numerics)?;
            unconverged += usize::from(!pv.converged);
            values.push(p.lagrangian.d3(t, pv.x, pv.v)?);
        }
        let mut warnings = Vec::new();
        if end < p.b {
            warnings.push(format!(
                "orders are only valid up to t = {end}; conditions on [T, b] are evaluated on [T, {end}]"
            ));
        }
        if unconverged > 0 {
            warnings.push(format!("{unconverged} Caputo quadratures for dL/dv did not converge"));
        }
        Ok(Self {
            p,
            c,
            cfg: *cfg,
            d3l: Trajectory::piecewise_linear(grid, values)?,
            warnings,
        })
    }

    pub fn d3l(&self) -> &Trajectory {
        &self.d3l
    }

    fn note(&mut self, what: &str, v: OpValue) -> f64 {
        if !v.converged {
            self.warnings.push(format!("{what}: quadrature did not converge"));
        }
        v.value
    }

    /// Interior Euler-Lagrange residual `dL/dx + D_dual dL/dv` at `a < t < T`.
    pub fn el_interior(&mut self, t: f64) -> Result<f64> {
        let (p, c) = (self.p, self.c);
        if !(p.a < t && t < c.t_end) {
            return Err(Error::Problem(format!("interior residual needs a < t < T, got t = {t}")));
        }
        let pv = eval_point(p, c, t, &self.cfg.numerics)?;
        let d2 = p.lagrangian.d2(t, pv.x, pv.v)?;
        let dual = dual_derivative(
            &self.d3l,
            &p.alpha,
            &p.beta,
            p.weights,
            p.a,
            c.t_end,
            t,
            &self.cfg.numerics,
        )?;
        Ok(d2 + self.note("dual derivative", dual))
    }

    /// Tail residual `gamma2 (aD_t^beta - TD_t^beta) dL/dv` at `T < t < b`;
    /// the second operator starts at `T`.
    pub fn el_tail(&mut self, t: f64) -> Result<f64> {
        let (p, c) = (self.p, self.c);
        if !(c.t_end < t && t < p.tail_end()) {
            return Err(Error::Problem(format!("tail residual needs T < t < b, got t = {t}")));
        }
        if p.weights.gamma2 == 0.0 {
            return Ok(0.0);
        }
        let n = &self.cfg.numerics;
        let from_a = left_rl_derivative(&self.d3l, &p.beta, p.a, t, n)?;
        let from_t = left_rl_derivative(&self.d3l, &p.beta, c.t_end, t, n)?;
        let from_a = self.note("tail derivative from a", from_a);
        let from_t = self.note("tail derivative from T", from_t);
        Ok(p.weights.gamma2 * (from_a - from_t))
    }

    /// `[gamma1 tI_T^(1-alpha) y - gamma2 TI_t^(1-beta) y]` at `t = T`. Both
    /// integrals run over an empty range there.
    fn bracket_at_t(&mut self) -> Result<f64> {
        let (p, t) = (self.p, self.c.t_end);
        let n = &self.cfg.numerics;
        let right = right_rl_integral(&self.d3l, &p.alpha.complement(), t, t, n)?;
        let left = left_rl_integral(&self.d3l, &p.beta.complement(), t, t, n)?;
        Ok(p.weights.gamma1 * right.value - p.weights.gamma2 * left.value)
    }

    /// `gamma2 [TI_t^(1-beta) y - aI_t^(1-beta) y]` at the tail end.
    fn tail_balance(&mut self) -> Result<f64> {
        let p = self.p;
        if p.weights.gamma2 == 0.0 {
            return Ok(0.0);
        }
        let end = p.tail_end();
        let n = &self.cfg.numerics;
        let order = p.beta.complement();
        let from_t = left_rl_integral(&self.d3l, &order, self.c.t_end, end, n)?;
        let from_a = left_rl_integral(&self.d3l, &order, p.a, end, n)?;
        let from_t = self.note("tail integral from T", from_t);
        let from_a = self.note("tail integral from a", from_a);
        Ok(p.weights.gamma2 * (from_t - from_a))
    }

    fn terminal_data(&self) -> Result<(f64, f64, f64, f64)> {
        let (p, c) = (self.p, self.c);
        let t = c.t_end;
        let pv = eval_point(p, c, t, &self.cfg.numerics)?;
        let l = p.lagrangian.value(t, pv.x, pv.v)?;
        let phi1 = p.terminal_cost.d1(t, pv.x)?;
        let phi2 = p.terminal_cost.d2(t, pv.x)?;
        let dx = c.x.left_derivative(t)?;
        Ok((l, phi1, phi2, dx))
    }

    /// The three general transversality residuals, first form.
    ///
    /// Where the source writes the last bracket of the first-variation formula
    /// with a bare `dL/dv`, it is read as `dL/dv` evaluated along the
    /// candidate with the combined Caputo derivative, as in the other terms.
    pub fn ct1(&mut self) -> Result<[f64; 3]> {
        let (l, phi1, phi2, dx) = self.terminal_data()?;
        let bracket = self.bracket_at_t()?;
        Ok([l + phi1 + phi2 * dx, bracket + phi2, self.tail_balance()?])
    }

    /// The second form, with the first line rewritten through the time
    /// increment: `ct2[0] = ct1[0] - x'(T) ct1[1]`.
    pub fn ct2(&mut self) -> Result<[f64; 3]> {
        let (l, phi1, phi2, dx) = self.terminal_data()?;
        let bracket = self.bracket_at_t()?;
        Ok([l + phi1 - dx * bracket, bracket + phi2, self.tail_balance()?])
    }

    /// Residuals of the conditions for a constrained terminal point.
    pub fn special(&mut self, case: SpecialCase) -> Result<Vec<f64>> {
        let p = self.p;
        let expected = match &p.constraint {
            TerminalConstraint::VerticalLine { .. } => Some(SpecialCase::Vertical),
            TerminalConstraint::HorizontalLine { .. } => Some(SpecialCase::Horizontal),
            TerminalConstraint::Curve { .. } => Some(SpecialCase::Curve),
            TerminalConstraint::Free => None,
        };
        if expected != Some(case) {
            return Err(Error::Problem(format!(
                "{case:?} conditions requested but the problem's terminal constraint is {}",
                p.constraint.name()
            )));
        }
        let t = self.c.t_end;
        let (l, phi1, phi2, dx) = self.terminal_data()?;
        let bracket = self.bracket_at_t()?;
        Ok(match case {
            SpecialCase::Vertical if t < p.b => vec![bracket + phi2, self.tail_balance()?],
            SpecialCase::Vertical => {
                // Both right integrals end at T = b and vanish at t = b.
                let n = &self.cfg.numerics;
                let ia = right_rl_integral(&self.d3l, &p.alpha.complement(), t, t, n)?.value;
                let ib = right_rl_integral(&self.d3l, &p.beta.complement(), t, t, n)?.value;
                vec![p.weights.gamma1 * ia - p.weights.gamma2 * ib + phi2]
            }
            SpecialCase::Horizontal => vec![l + phi1 - dx * bracket, self.tail_balance()?],
            SpecialCase::Curve => {
                let dpsi = p.constraint.dpsi(t)?;
                vec![
                    l + phi1 + phi2 * dpsi - (dx - dpsi) * bracket,
                    self.tail_balance()?,
                ]
            }
        })
    }

    fn sweep(&self, lo: f64, hi: f64) -> Vec<f64> {
        let n = self.cfg.sweep_points;
        let fd = &self.cfg.numerics.fd;
        (0..n)
            .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
            .filter(|&t| t - lo > fd.step(t) && hi - t > fd.step(t))
            .collect()
    }

    /// Full report: both Euler-Lagrange sweeps and the transversality
    /// residuals matching the problem's terminal constraint.
    pub fn report(mut self, form: CtForm) -> Result<ConditionReport> {
        let mut el_interior = Vec::new();
        for t in self.sweep(self.p.a, self.c.t_end) {
            el_interior.push((t, self.el_interior(t)?));
        }
        let mut el_tail = Vec::new();
        for t in self.sweep(self.c.t_end, self.p.tail_end()) {
            el_tail.push((t, self.el_tail(t)?));
        }
        let (ct, ct_kind) = match &self.p.constraint {
            TerminalConstraint::Free => match form {
                CtForm::Ct1 => (self.ct1()?.to_vec(), "ct1"),
                CtForm::Ct2 => (self.ct2()?.to_vec(), "ct2"),
            },
            TerminalConstraint::VerticalLine { .. } => (self.special(SpecialCase::Vertical)?, "vertical"),
            TerminalConstraint::HorizontalLine { .. } => (self.special(SpecialCase::Horizontal)?, "horizontal"),
            TerminalConstraint::Curve { .. } => (self.special(SpecialCase::Curve)?, "curve"),
        };
        let max_abs = el_interior
            .iter()
            .chain(&el_tail)
            .map(|&(_, r)| r)
            .chain(ct.iter().copied())
            .fold(0.0f64, |m, r| m.max(r.abs()));
        let mut warnings = self.warnings;
        warnings.dedup();
        Ok(ConditionReport {
            el_interior,
            el_tail,
            ct,
            ct_kind: ct_kind.to_string(),
            max_abs,
            warnings,
        })
    }
}

/// Residuals of the necessary conditions at one candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// `(t, residual)` on `(a, T)`.
    pub el_interior: Vec<(f64, f64)>,
    /// `(t, residual)` on `(T, b)`.
    pub el_tail: Vec<(f64, f64)>,
    pub ct: Vec<f64>,
    pub ct_kind: String,
    pub max_abs: f64,
    pub warnings: Vec<String>,
}

pub fn check(p: &Problem, c: &Candidate, cfg: &CheckConfig, form: CtForm) -> Result<ConditionReport> {
    Conditions::new(p, c, cfg)?.report(form)
}

pub fn el_residual_interior(p: &Problem, c: &Candidate, t: f64, cfg: &CheckConfig) -> Result<f64> {
    Conditions::new(p, c, cfg)?.el_interior(t)
}

pub fn el_residual_tail(p: &Problem, c: &Candidate, t: f64, cfg: &CheckConfig) -> Result<f64> {
    Conditions::new(p, c, cfg)?.el_tail(t)
}

pub fn transversality_ct1(p: &Problem, c: &Candidate, cfg: &CheckConfig) -> Result<[f64; 3]> {
    Conditions::new(p, c, cfg)?.ct1()
}

pub fn transversality_ct2(p: &Problem, c: &Candidate, cfg: &CheckConfig) -> Result<[f64; 3]> {
    Conditions::new(p, c, cfg)?.ct2()
}

pub fn transversality_special(
    p: &Problem,
    c: &Candidate,
    cfg: &CheckConfig,
    case: SpecialCase,
) -> Result<Vec<f64>> {
    Conditions::new(p, c, cfg)?.special(case)
}

/// Both sides of each integration-by-parts identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IbpResult {
    pub residual_left: f64,
    pub residual_right: f64,
    pub lhs_left: f64,
    pub rhs_left: f64,
    pub lhs_right: f64,
    pub rhs_right: f64,
    pub converged: bool,
}

/// `int_a^b f` for integrands that may be weakly singular at either end: the
/// interval is halved and each half is integrated on a mesh graded towards
/// its outer end.
fn two_sided_integral<F>(mut f: F, a: f64, b: f64, mu_a: f64, mu_b: f64, cfg: &NumericsConfig) -> Result<(f64, bool)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let half = 0.5 * (b - a);
    let left = singular_integral(|s| f(a + s), half, mu_a, &cfg.quad)?;
    let right = singular_integral(|s| f(b - s), half, mu_b, &cfg.quad)?;
    Ok((left.value + right.value, left.stats.converged && right.stats.converged))
}

/// Residuals `|LHS - RHS|` of the two integration-by-parts identities
///
/// `int y C aD_t x = int x tD_b y + [x tI_b^(1-alpha) y]_a^b` and
/// `int y C tD_b x = int x aD_t y - [x aI_t^(1-alpha) y]_a^b`,
///
/// where the right Caputo derivative in the second identity carries the
/// textbook sign (see [`crate::fracops`]).
pub fn ibp_check(
    x: &Trajectory,
    y: &Trajectory,
    alpha: &OrderFunction,
    a: f64,
    b: f64,
    cfg: &NumericsConfig,
) -> Result<IbpResult> {
    let mu_a = 1.0 - alpha.eval(a, a)?;
    let mu_b = 1.0 - alpha.eval(b, b)?;
    let comp = alpha.complement();
    let mut converged = true;
    let mut track = |v: OpValue| {
        converged &= v.converged;
        v.value
    };

    let (lhs1, c1) = two_sided_integral(
        |t| Ok(y.value(t)? * track(left_caputo(x, alpha, a, t, cfg)?)),
        a,
        b,
        mu_a,
        mu_b,
        cfg,
    )?;
    let (int1, c2) = two_sided_integral(
        |t| Ok(x.value(t)? * track(right_rl_derivative_clamped(y, alpha, t, b, cfg)?)),
        a,
        b,
        mu_a,
        mu_b,
        cfg,
    )?;
    let bracket1 = -x.value(a)? * track(right_rl_integral(y, &comp, a, b, cfg)?);
    let rhs1 = int1 + bracket1;

    let (lhs2, c3) = two_sided_integral(
        |t| Ok(y.value(t)? * track(textbook_right_caputo(x, alpha, t, b, cfg)?)),
        a,
        b,
        mu_a,
        mu_b,
        cfg,
    )?;
    let (int2, c4) = two_sided_integral(
        |t| Ok(x.value(t)? * track(left_rl_derivative_clamped(y, alpha, a, t, cfg)?)),
        a,
        b,
        mu_a,
        mu_b,
        cfg,
    )?;
    let bracket2 = x.value(b)? * track(left_rl_integral(y, &comp, a, b, cfg)?);
    let rhs2 = int2 - bracket2;

    Ok(IbpResult {
        residual_left: (lhs1 - rhs1).abs(),
        residual_right: (lhs2 - rhs2).abs(),
        lhs_left: lhs1,
        rhs_left: rhs1,
        lhs_right: lhs2,
        rhs_right: rhs2,
        converged: converged && c1 && c2 && c3 && c4,
    })
}

/// Number of grid points used by [`norm_d`].
pub const NORM_POINTS: usize = 201;

/// `max |x1 - x2| + max |C D (x1 - x2)| + |T1 - T2|` on a 201-point grid over
/// the problem window; the Caputo term uses linearity of the operator.
pub fn norm_d(c1: &Candidate, c2: &Candidate, p: &Problem, cfg: &NumericsConfig) -> Result<f64> {
    let (lo, hi) = p.window();
    let grid = uniform_grid(lo, hi, NORM_POINTS - 1);
    let (mut dx, mut dv) = (0.0f64, 0.0f64);
    for &t in &grid {
        let v1 = eval_point(p, c1, t, cfg)?;
        let v2 = eval_point(p, c2, t, cfg)?;
        dx = dx.max((v1.x - v2.x).abs());
        dv = dv.max((v1.v - v2.v).abs());
    }
    Ok(dx + dv + (c1.t_end - c2.t_end).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gamma;

    fn lagr(l: &str) -> Lagrangian {
        Lagrangian::parse(l, None, None, (0.0, 1.0)).unwrap()
    }

    fn simple_problem(l: &str, g: (f64, f64), order: f64) -> Problem {
        Problem {
            a: 0.0,
            b: 1.0,
            x_a: 0.0,
            alpha: OrderFunction::constant(order).unwrap(),
            beta: OrderFunction::constant(order).unwrap(),
            weights: GammaWeights::new(g.0, g.1).unwrap(),
            lagrangian: lagr(l),
            terminal_cost: TerminalCost::zero(),
            constraint: TerminalConstraint::Free,
            enforce_on: None,
        }
    }

    fn cand(x: &str, dx: &str, t_end: f64) -> Candidate {
        Candidate {
            x: Trajectory::parse(x, Some(dx), (0.0, 1.0)).unwrap(),
            t_end,
        }
    }

    #[test]
    fn lagrangian_partials_are_checked() {
        assert!(Lagrangian::parse("x^2 + t*v", Some("2*x"), Some("t"), (0.0, 1.0)).is_ok());
        let err = Lagrangian::parse("x^2 + t*v", Some("x"), None, (0.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
        assert!(Lagrangian::parse("x + T", None, None, (0.0, 1.0)).is_err());
        let l = lagr("x^3 + v^2");
        assert!((l.d2(0.5, 2.0, 1.0).unwrap() - 12.0).abs() < 1e-6);
        assert!((l.d3(0.5, 2.0, 1.5).unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn terminal_cost_and_curve() {
        let phi = TerminalCost::parse("T^2 + 3*xT", Some("2*T"), Some("3"), (0.0, 1.0)).unwrap();
        assert_eq!(phi.value(1.0, 1.0).unwrap(), 4.0);
        assert!(TerminalCost::parse("T*xT", Some("1"), None, (0.0, 1.0)).is_err());
        let c = TerminalConstraint::curve(Expr::parse("T^2").unwrap(), Some(Expr::parse("2*T").unwrap()), (0.0, 1.0));
        assert!(c.is_ok());
        let bad = TerminalConstraint::curve(Expr::parse("T^2").unwrap(), Some(Expr::parse("T").unwrap()), (0.0, 1.0));
        assert!(bad.is_err());
    }

    #[test]
    fn eval_point_trivial_cases() {
        let p = simple_problem("v^2", (0.5, 0.5), 0.5);
        let pv = eval_point(&p, &cand("0", "0", 1.0), 0.3, &NumericsConfig::default()).unwrap();
        assert_eq!((pv.x, pv.v), (0.0, 0.0));
        let p = simple_problem("v^2", (1.0, 0.0), 0.5);
        let pv = eval_point(&p, &cand("t", "1", 1.0), 0.0, &NumericsConfig::default()).unwrap();
        assert_eq!((pv.t, pv.x, pv.v), (0.0, 0.0, 0.0));
    }

    #[test]
    fn functional_trivial_cases() {
        let cfg = NumericsConfig::default();
        let p = simple_problem("0", (0.5, 0.5), 0.5);
        assert_eq!(functional(&p, &cand("t", "1", 0.7), &cfg).unwrap().value, 0.0);
        let p = simple_problem("1", (0.5, 0.5), 0.5);
        let j = functional(&p, &cand("t", "1", 0.7), &cfg).unwrap().value;
        assert!((j - 0.7).abs() < 1e-14);
    }

    #[test]
    fn candidate_validation() {
        let p = simple_problem("1", (0.5, 0.5), 0.5);
        let cfg = NumericsConfig::default();
        assert!(functional(&p, &cand("1 + t", "1", 0.5), &cfg).is_err());
        assert!(functional(&p, &cand("t", "1", 0.0), &cfg).is_err());
        assert!(functional(&p, &cand("t", "1", 1.5), &cfg).is_err());
    }

    #[test]
    fn cached_functional_is_bit_identical() {
        let mut p = simple_problem("(v - 1)^2 + x", (0.5, 0.5), 0.4);
        p.beta = OrderFunction::parse("0.2 + 0.1*tau", (0.0, 1.0)).unwrap();
        let grid = uniform_grid(0.0, 1.0, 10);
        let values: Vec<f64> = grid.iter().map(|t| t * (1.0 - t)).collect();
        let c = Candidate {
            x: Trajectory::piecewise_linear(grid, values).unwrap(),
            t_end: 0.8,
        };
        let cfg = NumericsConfig::default();
        let mut cache = WeightCache::new();
        let a = functional_cached(&p, &c, &cfg, &mut cache).unwrap().value;
        let b = functional_cached(&p, &c, &cfg, &mut cache).unwrap().value;
        let fresh = functional(&p, &c, &cfg).unwrap().value;
        assert_eq!(a.to_bits(), fresh.to_bits());
        assert_eq!(b.to_bits(), fresh.to_bits());
        assert!(!cache.is_empty());
    }

    #[test]
    fn residuals_vanish_when_lagrangian_ignores_x_and_v() {
        let p = simple_problem("t^2", (0.5, 0.5), 0.5);
        let c = cand("sin(t)", "cos(t)", 0.6);
        let cfg = CheckConfig {
            sweep_points: 5,
            ..CheckConfig::default()
        };
        let report = check(&p, &c, &cfg, CtForm::Ct1).unwrap();
        assert!(report.el_interior.iter().all(|&(_, r)| r == 0.0));
        assert!(report.el_tail.iter().all(|&(_, r)| r == 0.0));
        assert!((report.ct[0] - 0.36).abs() < 1e-12);
        assert_eq!(report.ct[1], 0.0);
        assert_eq!(report.ct[2], 0.0);
        assert_eq!(report.max_abs, report.ct[0].abs());
    }

    #[test]
    fn tail_residual_of_constant_curve() {
        // dL/dv = k constant: the two RL derivatives from a and from T differ.
        let k = 0.75;
        let p = simple_problem(&format!("{k}*v"), (0.5, 0.5), 0.5);
        let c = cand("t", "1", 0.4);
        let mut cond = Conditions::new(&p, &c, &CheckConfig::default()).unwrap();
        for &t in &[0.5, 0.7, 0.9] {
            let r = cond.el_tail(t).unwrap();
            let expected = 0.5 * k * (t.powf(-0.5) - (t - 0.4f64).powf(-0.5)) / gamma(0.5).unwrap();
            assert!((r - expected).abs() < 1e-4 * expected.abs().max(1.0), "{r} vs {expected}");
        }
        let p0 = simple_problem(&format!("{k}*v"), (1.0, 0.0), 0.5);
        let mut cond = Conditions::new(&p0, &c, &CheckConfig::default()).unwrap();
        assert_eq!(cond.el_tail(0.7).unwrap(), 0.0);
        assert_eq!(cond.ct1().unwrap()[2], 0.0);
    }

    #[test]
    fn special_case_mismatch_is_an_error() {
        let p = simple_problem("t", (0.5, 0.5), 0.5);
        let c = cand("t", "1", 0.5);
        let r = transversality_special(&p, &c, &CheckConfig::default(), SpecialCase::Vertical);
        assert!(r.is_err());
    }

    #[test]
    fn norm_examples() {
        let mut p = simple_problem("0", (1.0, 0.0), 0.5);
        let cfg = NumericsConfig::default();
        let c1 = cand("t", "1", 1.0);
        assert_eq!(norm_d(&c1, &c1, &p, &cfg).unwrap(), 0.0);
        let c2 = Candidate {
            x: Trajectory::parse("0", Some("0"), (0.0, 1.0)).unwrap(),
            t_end: 0.0,
        };
        let n = norm_d(&c1, &c2, &p, &cfg).unwrap();
        let expected = 2.0 + 1.0 / gamma(1.5).unwrap();
        assert!((n - expected).abs() < 1e-5, "{n}");
        p.x_a = 0.0;
        let shifted = cand("t + 0.25", "1", 1.0);
        let n = norm_d(&shifted, &c1, &p, &cfg).unwrap();
        assert!((n - 0.25).abs() < 1e-5);
    }
}
