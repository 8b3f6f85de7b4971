//! Variable-order fractional integrals and derivatives.
//!
//! Left operators integrate over `[a, t]` with order `alpha(t, tau)`; right
//! operators integrate over `[t, b]` with the arguments swapped, `alpha(tau, t)`.
//! Every kernel is weakly singular at `tau = t` and is evaluated with
//! [`crate::numerics::singular_pieces`] after the substitution `s = |t - tau|`.
//!
//! Sign convention for the right Caputo derivative: the kernel is taken with a
//! positive sign, so an increasing function has a positive right Caputo
//! derivative and, for `x(t) = t` with `beta(t, tau) = beta(tau)`,
//! `right_caputo(x)(t) = (b - t)^(1 - beta(t)) / Gamma(2 - beta(t))`. This is
//! the negative of the textbook right Caputo derivative
//! `-1/Gamma(1-alpha) * int_t^b (tau - t)^(-alpha) x'(tau) dtau`; see
//! [`textbook_right_caputo`]. Right Riemann-Liouville operators keep the
//! textbook sign.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var, VarBindings};
use crate::numerics::{
    central_diff, effective_grading, gamma, singular_pieces, singular_pieces_at_level,
    FiniteDiffConfig, PieceQuadrature, QuadratureConfig,
};

/// Side length of the sampling grid used to validate an order function.
pub const ORDER_CHECK_GRID: usize = 101;

/// Quadrature and finite-difference settings shared by every operator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct NumericsConfig {
    pub quad: QuadratureConfig,
    pub fd: FiniteDiffConfig,
}

impl NumericsConfig {
    pub fn validate(&self) -> Result<()> {
        self.quad.validate()?;
        self.fd.validate()
    }
}

/// A variable order `alpha(t, tau)` with values in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFunction {
    expr: Expr,
    uses_t: bool,
    uses_tau: bool,
}

impl OrderFunction {
    /// Builds an order function and checks its range on a dense grid of cell
    /// centres covering `domain x domain`.
    pub fn new(expr: Expr, domain: (f64, f64)) -> Result<Self> {
        let order = Self::unchecked(expr)?;
        order.validate_on(domain)?;
        Ok(order)
    }

    /// Builds an order function without sampling its range. Every evaluation
    /// still checks the value.
    pub fn unchecked(expr: Expr) -> Result<Self> {
        expr.check_vars(&[Var::Time, Var::Tau])?;
        let vars = expr.free_vars();
        Ok(Self {
            uses_t: vars.contains(Var::Time.name()),
            uses_tau: vars.contains(Var::Tau.name()),
            expr,
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::OrderRange {
                t: f64::NAN,
                tau: f64::NAN,
                value,
            });
        }
        Ok(Self {
            expr: Expr::num(value),
            uses_t: false,
            uses_tau: false,
        })
    }

    pub fn parse(source: &str, domain: (f64, f64)) -> Result<Self> {
        Self::new(Expr::parse(source)?, domain)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    fn uses(&self, var: Var) -> bool {
        match var {
            Var::Time => self.uses_t,
            Var::Tau => self.uses_tau,
            _ => false,
        }
    }

    pub fn validate_on(&self, (lo, hi): (f64, f64)) -> Result<()> {
        if !(lo < hi) {
            return Err(Error::Problem(format!("empty order-check interval [{lo}, {hi}]")));
        }
        let n = ORDER_CHECK_GRID;
        let h = (hi - lo) / n as f64;
        for i in 0..n {
            let t = lo + (i as f64 + 0.5) * h;
            for j in 0..n {
                let tau = lo + (j as f64 + 0.5) * h;
                self.eval(t, tau)?;
            }
        }
        Ok(())
    }

    /// `alpha(t, tau)`, failing if the value leaves `(0, 1)`.
    pub fn eval(&self, t: f64, tau: f64) -> Result<f64> {
        let b = VarBindings::new().with(Var::Time, t).with(Var::Tau, tau);
        let value = self.expr.eval(&b)?;
        if value > 0.0 && value < 1.0 {
            Ok(value)
        } else {
            Err(Error::OrderRange { t, tau, value })
        }
    }

    /// The pointwise complement `1 - alpha(t, tau)`.
    pub fn complement(&self) -> OrderFunction {
        OrderFunction {
            expr: self.expr.one_minus(),
            ..*self
        }
    }
}

/// Weights `(gamma1, gamma2)` of the left and right operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaWeights {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl GammaWeights {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        for (name, g) in [("gamma1", gamma1), ("gamma2", gamma2)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Problem(format!("{name} must lie in [0, 1], got {g}")));
            }
        }
        Ok(Self { gamma1, gamma2 })
    }

    pub fn dual(&self) -> GammaWeights {
        GammaWeights {
            gamma1: self.gamma2,
            gamma2: self.gamma1,
        }
    }
}

/// Piecewise-linear curve on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::Problem(format!(
                "piecewise-linear curve needs matching grid/value lengths >= 2 (got {} and {})",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Problem("grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Problem("curve values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    /// Uniform grid of `cells + 1` knots on `[a, b]`.
    pub fn uniform(a: f64, b: f64, values: Vec<f64>) -> Result<Self> {
        let cells = values.len().saturating_sub(1).max(1);
        let grid = uniform_grid(a, b, cells);
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cells(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn slope(&self, cell: usize) -> f64 {
        (self.values[cell + 1] - self.values[cell]) / (self.grid[cell + 1] - self.grid[cell])
    }

    pub fn slopes(&self) -> Vec<f64> {
        (0..self.cells()).map(|k| self.slope(k)).collect()
    }

    /// Index of the cell `[g_k, g_{k+1})` containing `t`; the last cell is closed.
    pub fn cell_of(&self, t: f64) -> usize {
        let n = self.cells();
        match self.grid.partition_point(|&g| g <= t) {
            0 => 0,
            i => (i - 1).min(n - 1),
        }
    }

    fn check_range(&self, t: f64) -> Result<()> {
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        let slack = 1e-12 * (hi - lo).max(1.0);
        if t < lo - slack || t > hi + slack {
            return Err(Error::Problem(format!("t = {t} lies outside the curve's grid [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        let k = self.cell_of(t);
        Ok(self.values[k] + self.slope(k) * (t - self.grid[k]))
    }

    /// Right-continuous derivative (cell slope).
    pub fn derivative(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        Ok(self.slope(self.cell_of(t)))
    }

    /// Slope of the cell ending at `t` when `t` is a knot.
    pub fn left_derivative(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        let k = self.cell_of(t);
        if k > 0 && t <= self.grid[k] {
            Ok(self.slope(k - 1))
        } else {
            Ok(self.slope(k))
        }
    }
}

pub(crate) fn uniform_grid(a: f64, b: f64, cells: usize) -> Vec<f64> {
    (0..=cells)
        .map(|i| {
            if i == cells {
                b
            } else {
                a + (b - a) * i as f64 / cells as f64
            }
        })
        .collect()
}

/// A candidate curve together with its first derivative.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    /// Closed form in `t`; without `dx` the derivative is a central difference.
    ClosedForm {
        x: Expr,
        dx: Option<Expr>,
        fd: FiniteDiffConfig,
    },
    PiecewiseLinear(PiecewiseLinear),
}

impl Trajectory {
    /// Closed-form trajectory; a supplied derivative is checked against a
    /// central difference of `x` at 20 points of `[a, b]`.
    pub fn closed_form(x: Expr, dx: Option<Expr>, (a, b): (f64, f64)) -> Result<Self> {
        x.check_vars(&[Var::Time])?;
        if let Some(dx) = &dx {
            dx.check_vars(&[Var::Time])?;
        }
        let fd = FiniteDiffConfig::default();
        let traj = Trajectory::ClosedForm { x, dx, fd };
        if let Trajectory::ClosedForm { x, dx: Some(dx), .. } = &traj {
            for i in 0..20 {
                let t = a + (b - a) * (i as f64 + 0.5) / 20.0;
                let eval = |e: &Expr, u: f64| e.eval(&VarBindings::new().with(Var::Time, u));
                let numeric = central_diff(|u| eval(x, u), t, &fd)?;
                let given = eval(dx, t)?;
                if (numeric - given).abs() > 1e-4 * given.abs().max(1.0) {
                    return Err(Error::Consistency(format!(
                        "derivative `{dx}` = {given} disagrees with the central difference {numeric} of `{x}` at t = {t}"
                    )));
                }
            }
        }
        Ok(traj)
    }

    pub fn parse(x: &str, dx: Option<&str>, span: (f64, f64)) -> Result<Self> {
        let x = Expr::parse(x)?;
        let dx = dx.map(Expr::parse).transpose()?;
        Self::closed_form(x, dx, span)
    }

    pub fn piecewise_linear(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(Trajectory::PiecewiseLinear(PiecewiseLinear::new(grid, values)?))
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        match self {
            Trajectory::ClosedForm { x, .. } => x.eval(&VarBindings::new().with(Var::Time, t)),
            Trajectory::PiecewiseLinear(pl) => pl.value(t),
        }
    }

    pub fn derivative(&self, t: f64) -> Result<f64> {
        match self {
            Trajectory::ClosedForm { x, dx: Some(dx), .. } => {
                let _ = x;
                dx.eval(&VarBindings::new().with(Var::Time, t))
            }
            Trajectory::ClosedForm { x, dx: None, fd } => central_diff(
                |u| x.eval(&VarBindings::new().with(Var::Time, u)),
                t,
                fd,
            ),
            Trajectory::PiecewiseLinear(pl) => pl.derivative(t),
        }
    }

    /// One-sided derivative from the left; differs from [`Self::derivative`]
    /// only at knots of a piecewise-linear curve.
    pub fn left_derivative(&self, t: f64) -> Result<f64> {
        match self {
            Trajectory::PiecewiseLinear(pl) => pl.left_derivative(t),
            _ => self.derivative(t),
        }
    }

    pub fn knots(&self) -> &[f64] {
        match self {
            Trajectory::PiecewiseLinear(pl) => pl.grid(),
            Trajectory::ClosedForm { .. } => &[],
        }
    }

    pub fn as_piecewise_linear(&self) -> Option<&PiecewiseLinear> {
        match self {
            Trajectory::PiecewiseLinear(pl) => Some(pl),
            _ => None,
        }
    }
}

/// The operator families exposed to users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    LeftRlIntegral,
    RightRlIntegral,
    LeftRlDerivative,
    RightRlDerivative,
    LeftCaputo,
    RightCaputo,
    CombinedRl,
    CombinedCaputo,
    DualDerivative,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 9] = [
        OperatorKind::LeftRlIntegral,
        OperatorKind::RightRlIntegral,
        OperatorKind::LeftRlDerivative,
        OperatorKind::RightRlDerivative,
        OperatorKind::LeftCaputo,
        OperatorKind::RightCaputo,
        OperatorKind::CombinedRl,
        OperatorKind::CombinedCaputo,
        OperatorKind::DualDerivative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::LeftRlIntegral => "left_rl_integral",
            OperatorKind::RightRlIntegral => "right_rl_integral",
            OperatorKind::LeftRlDerivative => "left_rl_derivative",
            OperatorKind::RightRlDerivative => "right_rl_derivative",
            OperatorKind::LeftCaputo => "left_caputo",
            OperatorKind::RightCaputo => "right_caputo",
            OperatorKind::CombinedRl => "combined_rl",
            OperatorKind::CombinedCaputo => "combined_caputo",
            OperatorKind::DualDerivative => "dual_derivative",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let normalized = name.replace('-', "_");
        Self::ALL.into_iter().find(|k| k.name() == normalized)
    }

    /// Whether the kind needs both order functions and weights.
    pub fn is_combined(self) -> bool {
        matches!(
            self,
            OperatorKind::CombinedRl | OperatorKind::CombinedCaputo | OperatorKind::DualDerivative
        )
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An operator value plus a flag for quadrature convergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpValue {
    pub value: f64,
    pub converged: bool,
}

impl OpValue {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            converged: true,
        }
    }

    fn scaled(self, k: f64) -> Self {
        Self {
            value: k * self.value,
            converged: self.converged,
        }
    }

    fn plus(self, other: OpValue) -> Self {
        Self {
            value: self.value + other.value,
            converged: self.converged && other.converged,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    /// `s^(alpha - 1) / Gamma(alpha)`
    Integral,
    /// `s^(-alpha) / Gamma(1 - alpha)`
    Derivative,
}

struct KernelSpec<'a> {
    side: Side,
    kernel: Kernel,
    order: &'a OrderFunction,
    t: f64,
}

impl KernelSpec<'_> {
    fn tau(&self, s: f64) -> f64 {
        match self.side {
            Side::Left => self.t - s,
            Side::Right => self.t + s,
        }
    }

    fn s_of(&self, tau: f64) -> f64 {
        match self.side {
            Side::Left => self.t - tau,
            Side::Right => tau - self.t,
        }
    }

    fn weight(&self, s: f64) -> Result<f64> {
        let tau = self.tau(s);
        let alpha = match self.side {
            Side::Left => self.order.eval(self.t, tau)?,
            Side::Right => self.order.eval(tau, self.t)?,
        };
        Ok(match self.kernel {
            Kernel::Integral => s.powf(alpha - 1.0) / gamma(alpha)?,
            Kernel::Derivative => s.powf(-alpha) / gamma(1.0 - alpha)?,
        })
    }

    fn mu0(&self) -> Result<f64> {
        let alpha = self.order.eval(self.t, self.t)?;
        Ok(match self.kernel {
            Kernel::Integral => alpha,
            Kernel::Derivative => 1.0 - alpha,
        })
    }

    fn breaks(&self, knots: &[f64], length: f64) -> Vec<f64> {
        knots
            .iter()
            .map(|&k| self.s_of(k))
            .filter(|&s| s > 0.0 && s < length)
            .collect()
    }

    /// `int_0^length weight(s) data(tau(s)) ds`, split at trajectory knots.
    fn integrate<F>(
        &self,
        length: f64,
        mut data: F,
        knots: &[f64],
        cfg: &QuadratureConfig,
        fixed: Option<(f64, u32)>,
    ) -> Result<PieceQuadrature>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let breaks = self.breaks(knots, length);
        let integrand = |s: f64| Ok(self.weight(s)? * data(self.tau(s))?);
        match fixed {
            None => singular_pieces(integrand, length, self.mu0()?, &breaks, cfg),
            Some((grading, level)) => {
                let frozen = QuadratureConfig { grading, ..*cfg };
                singular_pieces_at_level(integrand, length, 1.0, &breaks, &frozen, level)
            }
        }
    }
}

fn to_value(q: &PieceQuadrature) -> OpValue {
    OpValue {
        value: q.total(),
        converged: q.stats.converged,
    }
}

fn check_order(lo: f64, hi: f64) -> Result<()> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Problem(format!("invalid evaluation range [{lo}, {hi}]")));
    }
    Ok(())
}

/// Left Riemann-Liouville integral `aI_t^alpha x(t)`.
pub fn left_rl_integral(
    x: &Trajectory,
    alpha: &OrderFunction,
    a: f64,
    t: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    check_order(a, t)?;
    if t == a {
        return Ok(OpValue::exact(0.0));
    }
    let spec = KernelSpec {
        side: Side::Left,
        kernel: Kernel::Integral,
        order: alpha,
        t,
    };
    let q = spec.integrate(t - a, |tau| x.value(tau), x.knots(), &cfg.quad, None)?;
    Ok(to_value(&q))
}

/// Right Riemann-Liouville integral `tI_b^alpha x(t)`, order `alpha(tau, t)`.
pub fn right_rl_integral(
    x: &Trajectory,
    alpha: &OrderFunction,
    t: f64,
    b: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    check_order(t, b)?;
    if t == b {
        return Ok(OpValue::exact(0.0));
    }
    let spec = KernelSpec {
        side: Side::Right,
        kernel: Kernel::Integral,
        order: alpha,
        t,
    };
    let q = spec.integrate(b - t, |tau| x.value(tau), x.knots(), &cfg.quad, None)?;
    Ok(to_value(&q))
}

/// Left Caputo derivative `C aD_t^alpha x(t)`.
pub fn left_caputo(
    x: &Trajectory,
    alpha: &OrderFunction,
    a: f64,
    t: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    check_order(a, t)?;
    if t == a {
        return Ok(OpValue::exact(0.0));
    }
    if let Some(pl) = x.as_piecewise_linear() {
        let w = caputo_weights(pl, alpha, Side::Left, a, t, &cfg.quad)?;
        return Ok(w.apply(&pl.slopes()));
    }
    let spec = KernelSpec {
        side: Side::Left,
        kernel: Kernel::Derivative,
        order: alpha,
        t,
    };
    let q = spec.integrate(t - a, |tau| x.derivative(tau), &[], &cfg.quad, None)?;
    Ok(to_value(&q))
}

/// Right Caputo derivative `C tD_b^alpha x(t)`, order `alpha(tau, t)`, with the
/// positive sign convention described in the module docs.
pub fn right_caputo(
    x: &Trajectory,
    alpha: &OrderFunction,
    t: f64,
    b: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    check_order(t, b)?;
    if t == b {
        return Ok(OpValue::exact(0.0));
    }
    if let Some(pl) = x.as_piecewise_linear() {
        let w = caputo_weights(pl, alpha, Side::Right, t, b, &cfg.quad)?;
        return Ok(w.apply(&pl.slopes()));
    }
    let spec = KernelSpec {
        side: Side::Right,
        kernel: Kernel::Derivative,
        order: alpha,
        t,
    };
    let q = spec.integrate(b - t, |tau| x.derivative(tau), &[], &cfg.quad, None)?;
    Ok(to_value(&q))
}

/// The right Caputo derivative with the textbook sign, `-right_caputo`.
pub fn textbook_right_caputo(
    x: &Trajectory,
    alpha: &OrderFunction,
    t: f64,
    b: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    Ok(right_caputo(x, alpha, t, b, cfg)?.scaled(-1.0))
}

/// Outer derivative of the inner RL integral `u -> int kernel(u) x`.
///
/// The adaptive level and grading found at `t` are frozen for both stencil
/// points so the difference quotient sees one smooth mesh family.
fn rl_derivative(
    side: Side,
    x: &Trajectory,
    alpha: &OrderFunction,
    t: f64,
    end: f64,
    cfg: &NumericsConfig,
    clamp: bool,
) -> Result<OpValue> {
    let room = match side {
        Side::Left => t - end,
        Side::Right => end - t,
    };
    let mut fd = cfg.fd;
    if clamp && room > 0.0 && room <= 2.0 * fd.step(t) {
        fd.step_scale = 0.25 * room / t.abs().max(1.0);
    }
    let h = fd.step(t);
    if !(room > h) {
        return Err(Error::domain(
            format!("RL derivative at t = {t}"),
            format!("t must lie more than one difference step ({h:e}) inside the interval"),
        ));
    }
    let length = |u: f64| match side {
        Side::Left => u - end,
        Side::Right => end - u,
    };
    let spec_at = |u: f64| KernelSpec {
        side,
        kernel: Kernel::Derivative,
        order: alpha,
        t: u,
    };
    let centre = spec_at(t);
    let probe = centre.integrate(length(t), |tau| x.value(tau), x.knots(), &cfg.quad, None)?;
    let grading = effective_grading(cfg.quad.grading, centre.mu0()?);
    let fixed = Some((grading, probe.stats.level.max(1)));
    let d = central_diff(
        |u| {
            let q = spec_at(u).integrate(length(u), |tau| x.value(tau), x.knots(), &cfg.quad, fixed)?;
            Ok(q.total())
        },
        t,
        &fd,
    )?;
    let value = match side {
        Side::Left => d,
        Side::Right => -d,
    };
    Ok(OpValue {
        value,
        converged: probe.stats.converged,
    })
}

/// Left Riemann-Liouville derivative `aD_t^alpha x(t)`; requires `a < t`
/// with room for the outer central difference.
pub fn left_rl_derivative(
    x: &Trajectory,
    alpha: &OrderFunction,
    a: f64,
    t: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    check_order(a, t)?;
    rl_derivative(Side::Left, x, alpha, t, a, cfg, false)
}

/// Right Riemann-Liouville derivative `tD_b^alpha x(t)` (textbook sign).
pub fn right_rl_derivative(
    x: &Trajectory,
    alpha: &OrderFunction,
    t: f64,
    b: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    check_order(t, b)?;
    rl_derivative(Side::Right, x, alpha, t, b, cfg, false)
}

/// RL derivatives that shrink the difference step near the interval end
/// instead of failing; used by outer quadratures whose nodes approach it.
pub(crate) fn left_rl_derivative_clamped(
    x: &Trajectory,
    alpha: &OrderFunction,
    a: f64,
    t: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    check_order(a, t)?;
    rl_derivative(Side::Left, x, alpha, t, a, cfg, true)
}

pub(crate) fn right_rl_derivative_clamped(
    x: &Trajectory,
    alpha: &OrderFunction,
    t: f64,
    b: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    check_order(t, b)?;
    rl_derivative(Side::Right, x, alpha, t, b, cfg, true)
}

/// An evaluation interval `[a, b]` for combined operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub a: f64,
    pub b: f64,
}

/// `gamma1 * left_caputo(alpha) + gamma2 * right_caputo(beta)` on `[a, b]`.
pub fn combined_caputo(
    x: &Trajectory,
    alpha: &OrderFunction,
    beta: &OrderFunction,
    g: GammaWeights,
    span: Span,
    t: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    let left = left_caputo(x, alpha, span.a, t, cfg)?;
    let right = right_caputo(x, beta, t, span.b, cfg)?;
    Ok(left.scaled(g.gamma1).plus(right.scaled(g.gamma2)))
}

/// `gamma1 * left_rl_derivative(alpha) + gamma2 * right_rl_derivative(beta)`.
pub fn combined_rl(
    x: &Trajectory,
    alpha: &OrderFunction,
    beta: &OrderFunction,
    g: GammaWeights,
    span: Span,
    t: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    let left = left_rl_derivative(x, alpha, span.a, t, cfg)?;
    let right = right_rl_derivative(x, beta, t, span.b, cfg)?;
    Ok(left.scaled(g.gamma1).plus(right.scaled(g.gamma2)))
}

/// Dual derivative `gamma2 * aD_t^beta y + gamma1 * tD_T^alpha y`; the right
/// operator stops at the terminal time `T`, not at `b`.
#[allow(clippy::too_many_arguments)]
pub fn dual_derivative(
    y: &Trajectory,
    alpha: &OrderFunction,
    beta: &OrderFunction,
    g: GammaWeights,
    a: f64,
    terminal: f64,
    t: f64,
    cfg: &NumericsConfig,
) -> Result<OpValue> {
    if !(a <= t && t <= terminal) {
        return Err(Error::Problem(format!(
            "dual derivative needs a <= t <= T, got a = {a}, t = {t}, T = {terminal}"
        )));
    }
    let mut out = OpValue::exact(0.0);
    if g.gamma2 != 0.0 {
        out = out.plus(left_rl_derivative(y, beta, a, t, cfg)?.scaled(g.gamma2));
    }
    if g.gamma1 != 0.0 {
        out = out.plus(right_rl_derivative(y, alpha, t, terminal, cfg)?.scaled(g.gamma1));
    }
    Ok(out)
}

/// Per-cell Caputo weights of a piecewise-linear curve: the operator value is
/// `sum_k slope_k * weights[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub weights: Vec<f64>,
    pub converged: bool,
}

impl CellWeights {
    pub fn apply(&self, slopes: &[f64]) -> OpValue {
        let value = self.weights.iter().zip(slopes).map(|(w, c)| w * c).sum();
        OpValue {
            value,
            converged: self.converged,
        }
    }

    fn zeros(cells: usize) -> Self {
        Self {
            weights: vec![0.0; cells],
            converged: true,
        }
    }
}

fn caputo_weights(
    pl: &PiecewiseLinear,
    order: &OrderFunction,
    side: Side,
    lo: f64,
    hi: f64,
    cfg: &QuadratureConfig,
) -> Result<CellWeights> {
    let t = match side {
        Side::Left => hi,
        Side::Right => lo,
    };
    if hi == lo {
        return Ok(CellWeights::zeros(pl.cells()));
    }
    let path_constant = match side {
        Side::Left => !order.uses(Var::Tau),
        Side::Right => !order.uses(Var::Time),
    };
    if path_constant {
        return exact_caputo_weights(pl, order, side, lo, hi, t);
    }
    let spec = KernelSpec {
        side,
        kernel: Kernel::Derivative,
        order,
        t,
    };
    let q = spec.integrate(hi - lo, |_| Ok(1.0), pl.grid(), cfg, None)?;
    let mut weights = vec![0.0; pl.cells()];
    for (k, w) in q.bounds.windows(2).enumerate() {
        let mid = spec.tau(0.5 * (w[0] + w[1]));
        weights[pl.cell_of(mid)] += q.values[k];
    }
    Ok(CellWeights {
        weights,
        converged: q.stats.converged,
    })
}

/// Cell integrals of `s^(-alpha) / Gamma(1 - alpha)` in closed form, valid when
/// the order does not vary along the integration path.
fn exact_caputo_weights(
    pl: &PiecewiseLinear,
    order: &OrderFunction,
    side: Side,
    lo: f64,
    hi: f64,
    t: f64,
) -> Result<CellWeights> {
    let alpha = order.eval(t, t)?;
    let p = 1.0 - alpha;
    let g = gamma(2.0 - alpha)?;
    let grid = pl.grid();
    let mut weights = vec![0.0; pl.cells()];
    for (k, w) in weights.iter_mut().enumerate() {
        let (c0, c1) = (grid[k].max(lo), grid[k + 1].min(hi));
        if c0 >= c1 {
            continue;
        }
        *w = match side {
            Side::Left => ((t - c0).powf(p) - (t - c1).powf(p)) / g,
            Side::Right => ((c1 - t).powf(p) - (c0 - t).powf(p)) / g,
        };
    }
    Ok(CellWeights {
        weights,
        converged: true,
    })
}

/// Left and right Caputo weights of a piecewise-linear curve at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaputoWeights {
    pub left: CellWeights,
    pub right: CellWeights,
}

impl CaputoWeights {
    pub fn compute(
        pl: &PiecewiseLinear,
        alpha: &OrderFunction,
        beta: &OrderFunction,
        span: Span,
        t: f64,
        cfg: &QuadratureConfig,
    ) -> Result<Self> {
        check_order(span.a, t)?;
        check_order(t, span.b)?;
        Ok(Self {
            left: caputo_weights(pl, alpha, Side::Left, span.a, t, cfg)?,
            right: caputo_weights(pl, beta, Side::Right, t, span.b, cfg)?,
        })
    }

    /// Same arithmetic as [`combined_caputo`] on a piecewise-linear curve.
    pub fn combined(&self, slopes: &[f64], g: GammaWeights) -> OpValue {
        self.left
            .apply(slopes)
            .scaled(g.gamma1)
            .plus(self.right.apply(slopes).scaled(g.gamma2))
    }
}
