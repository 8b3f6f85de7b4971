//! Direct minimisation of `J` over piecewise-linear trajectories and `T` by
//! derivative-free coordinate pattern search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracops::{uniform_grid, NumericsConfig, PiecewiseLinear, Trajectory};
use crate::varcalc::{check, functional_cached, Candidate, CheckConfig, ConditionReport, CtForm, Problem, TerminalConstraint, WeightCache};

/// Weight of the quadratic penalty enforcing a horizontal line or a curve.
pub const PENALTY_WEIGHT: f64 = 1e3;
/// Moves must beat the incumbent by this relative margin to count, so that
/// round-off never drives the search.
const ACCEPT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Number of grid points on `[a, b]`, including the pinned one at `a`.
    pub knots: usize,
    /// Maximum number of sweeps per run.
    pub max_iters: usize,
    pub step_init: f64,
    pub step_shrink: f64,
    /// A sweep improving the objective by less than this counts as failed.
    pub tol_j: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            knots: 40,
            max_iters: 2000,
            step_init: 0.1,
            step_shrink: 0.5,
            tol_j: 1e-7,
            restarts: 2,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knots < 8 {
            return Err(Error::Config(format!("knots must be >= 8, got {}", self.knots)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return Err(Error::Config(format!("step_init must be > 0, got {}", self.step_init)));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::Config(format!("step_shrink must lie in (0, 1), got {}", self.step_shrink)));
        }
        if !(self.tol_j > 0.0) {
            return Err(Error::Config(format!("tol_J must be > 0, got {}", self.tol_j)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    /// Objective after the sweep (functional plus any constraint penalty).
    pub j: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub candidate: Candidate,
    /// `J` at the returned candidate, without penalty terms.
    pub j: f64,
    pub objective: f64,
    pub report: ConditionReport,
    pub iterations: usize,
    pub converged: bool,
    /// Per-sweep log of the returned run.
    pub history: Vec<HistoryEntry>,
    pub runs: Vec<RunSummary>,
}

/// Range allowed for `T`: `(a, b]` intersected with the problem window.
fn t_range(p: &Problem) -> (f64, f64) {
    let (lo, hi) = p.window();
    (lo.max(p.a), hi.min(p.b))
}

/// `x = x_a` on the solver grid. `T` is the vertical line if pinned, else the
/// middle of the window (which is `(a + b) / 2` without `enforce_on`).
/// Restart `k > 0` perturbs the free knots by `U[-0.5, 0.5] step_init` and a
/// free `T` by `U[-0.1, 0.1] (b - a)`, clamped into the window.
pub fn initial_guess(p: &Problem, cfg: &SolverConfig, restart: usize) -> Result<Candidate> {
    let grid = uniform_grid(p.a, p.b, cfg.knots - 1);
    let mut values = vec![p.x_a; grid.len()];
    let (lo, hi) = t_range(p);
    let mut t_end = 0.5 * (lo + hi);
    if restart > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        for v in values.iter_mut().skip(1) {
            *v += rng.gen_range(-0.5..=0.5) * cfg.step_init;
        }
        let shift: f64 = rng.gen_range(-0.1..=0.1) * (p.b - p.a);
        let margin = 1e-3 * (hi - lo);
        t_end = (t_end + shift).clamp(lo + margin, hi);
    }
    if let TerminalConstraint::VerticalLine { t_end: pinned } = p.constraint {
        t_end = pinned;
    }
    Ok(Candidate {
        x: Trajectory::piecewise_linear(grid, values)?,
        t_end,
    })
}

struct Search<'a> {
    p: &'a Problem,
    cfg: &'a NumericsConfig,
    cache: WeightCache,
    grid: Vec<f64>,
}

impl Search<'_> {
    fn candidate(&self, values: &[f64], t_end: f64) -> Result<Candidate> {
        Ok(Candidate {
            x: Trajectory::PiecewiseLinear(PiecewiseLinear::new(self.grid.clone(), values.to_vec())?),
            t_end,
        })
    }

    fn penalty(&self, c: &Candidate) -> Result<f64> {
        let xt = || c.x.value(c.t_end);
        Ok(match &self.p.constraint {
            TerminalConstraint::HorizontalLine { x_end } => PENALTY_WEIGHT * (xt()? - x_end).powi(2),
            TerminalConstraint::Curve { .. } => PENALTY_WEIGHT * (xt()? - self.p.constraint.psi(c.t_end)?).powi(2),
            _ => 0.0,
        })
    }

    fn objective(&mut self, values: &[f64], t_end: f64) -> Result<f64> {
        let c = self.candidate(values, t_end)?;
        let j = functional_cached(self.p, &c, self.cfg, &mut self.cache)?.value;
        let total = j + self.penalty(&c)?;
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::Solver(format!("objective is {total}")))
        }
    }
}

struct Run {
    values: Vec<f64>,
    t_end: f64,
    objective: f64,
    history: Vec<HistoryEntry>,
    iterations: usize,
    converged: bool,
}

fn improves(new: f64, old: f64) -> bool {
    new < old - ACCEPT_MARGIN * old.abs().max(1.0)
}

/// One pattern-search run. A sweep tries `+step` then `-step` on each free
/// knot in order, accepting the first strict improvement; `T` is tried only
/// after the knots gain less than `tol_j` in a sweep, so that `T` does not
/// collapse towards `a` before the trajectory has adapted. If the whole sweep
/// gains less than `tol_j`, the step shrinks.
fn run(search: &mut Search, start: &Candidate, cfg: &SolverConfig) -> Result<Run> {
    let pl = start
        .x
        .as_piecewise_linear()
        .ok_or_else(|| Error::Solver("start must be piecewise linear".into()))?;
    let mut values = pl.values().to_vec();
    let mut t_end = start.t_end;
    let mut best = search
        .objective(&values, t_end)
        .map_err(|e| Error::Solver(format!("cannot evaluate J at the initial point: {e}")))?;
    let t_free = !matches!(search.p.constraint, TerminalConstraint::VerticalLine { .. });
    let (t_lo, t_hi) = t_range(search.p);
    let mut step = cfg.step_init;
    let floor = 1e-3 * cfg.step_init;
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_iters && step >= floor {
        iterations += 1;
        let before = best;
        for k in 1..values.len() {
            for d in [step, -step] {
                let old = values[k];
                values[k] = old + d;
                match search.objective(&values, t_end) {
                    Ok(j) if improves(j, best) => {
                        best = j;
                        break;
                    }
                    _ => values[k] = old,
                }
            }
        }
        if t_free && before - best < cfg.tol_j {
            for d in [step, -step] {
                let trial = t_end + d;
                if !(trial > t_lo && trial <= t_hi) {
                    continue;
                }
                match search.objective(&values, trial) {
                    Ok(j) if improves(j, best) => {
                        best = j;
                        t_end = trial;
                        break;
                    }
                    _ => {}
                }
            }
        }
        if before - best < cfg.tol_j {
            step *= cfg.step_shrink;
        }
        history.push(HistoryEntry { j: best, step });
    }
    Ok(Run {
        values,
        t_end,
        objective: best,
        history,
        iterations,
        converged: step < floor,
    })
}

/// Runs `restarts + 1` searches and returns the best, with its condition report.
pub fn solve(p: &Problem, cfg: &SolverConfig, numerics: &NumericsConfig) -> Result<Solution> {
    cfg.validate()?;
    numerics.validate()?;
    p.validate()?;
    let mut search = Search {
        p,
        cfg: numerics,
        cache: WeightCache::new(),
        grid: uniform_grid(p.a, p.b, cfg.knots - 1),
    };
    let mut best: Option<Run> = None;
    let mut runs = Vec::new();
    for k in 0..=cfg.restarts {
        let start = initial_guess(p, cfg, k)?;
        let r = run(&mut search, &start, cfg)?;
        runs.push(RunSummary {
            objective: r.objective,
            iterations: r.iterations,
            converged: r.converged,
        });
        if best.as_ref().map_or(true, |b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one run");
    let candidate = search.candidate(&best.values, best.t_end)?;
    let eval = functional_cached(p, &candidate, numerics, &mut search.cache)?;
    let check_cfg = CheckConfig {
        numerics: *numerics,
        ..CheckConfig::default()
    };
    let mut report = check(p, &candidate, &check_cfg, CtForm::Ct1)?;
    report.warnings.extend(eval.warnings);
    Ok(Solution {
        j: eval.value,
        objective: best.objective,
        candidate,
        report,
        iterations: best.iterations,
        converged: best.converged,
        history: best.history,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::{GammaWeights, OrderFunction};
    use crate::varcalc::{Lagrangian, TerminalCost};

    fn problem(l: &str, constraint: TerminalConstraint) -> Problem {
        Problem {
            a: 0.0,
            b: 1.0,
            x_a: 0.0,
            alpha: OrderFunction::constant(0.5).unwrap(),
            beta: OrderFunction::constant(0.5).unwrap(),
            weights: GammaWeights::new(0.5, 0.5).unwrap(),
            lagrangian: Lagrangian::parse(l, None, None, (0.0, 1.0)).unwrap(),
            terminal_cost: TerminalCost::zero(),
            constraint,
            enforce_on: None,
        }
    }

    fn small() -> SolverConfig {
        SolverConfig {
            knots: 8,
            max_iters: 30,
            restarts: 1,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { knots: 7, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { step_shrink: 1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { step_init: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn initial_guess_rules() {
        let p = problem("v^2", TerminalConstraint::Free);
        let cfg = SolverConfig::default();
        let c = initial_guess(&p, &cfg, 0).unwrap();
        assert_eq!(c.t_end, 0.5);
        let pl = c.x.as_piecewise_linear().unwrap();
        assert_eq!(pl.values().len(), 40);
        assert!(pl.values().iter().all(|&v| v == 0.0));
        assert_eq!(initial_guess(&p, &cfg, 2).unwrap(), initial_guess(&p, &cfg, 2).unwrap());
        assert_ne!(initial_guess(&p, &cfg, 1).unwrap(), initial_guess(&p, &cfg, 2).unwrap());
        let r = initial_guess(&p, &cfg, 1).unwrap();
        let vals = r.x.as_piecewise_linear().unwrap().values();
        assert_eq!(vals[0], 0.0);
        assert!(vals.iter().all(|v| v.abs() <= 0.05));
        let pinned = problem("v^2", TerminalConstraint::VerticalLine { t_end: 0.8 });
        for k in 0..3 {
            assert_eq!(initial_guess(&pinned, &cfg, k).unwrap().t_end, 0.8);
        }
    }

    #[test]
    fn zero_is_optimal_for_squared_derivative() {
        let p = problem("v^2", TerminalConstraint::VerticalLine { t_end: 1.0 });
        let s = solve(&p, &small(), &NumericsConfig::default()).unwrap();
        assert!(s.j.abs() < 1e-12, "{}", s.j);
        assert_eq!(s.candidate.t_end, 1.0);
        assert!(s.history.windows(2).all(|w| w[1].j <= w[0].j));
    }

    #[test]
    fn horizontal_line_is_respected() {
        let p = problem("1 + (x - t)^2", TerminalConstraint::HorizontalLine { x_end: 0.3 });
        let s = solve(&p, &small(), &NumericsConfig::default()).unwrap();
        let xt = s.candidate.x.value(s.candidate.t_end).unwrap();
        assert!((xt - 0.3).abs() < 0.05, "x(T) = {xt}");
    }
}
