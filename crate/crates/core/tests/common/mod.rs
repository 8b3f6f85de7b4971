#![allow(dead_code)]

use fracvar_core::fracops::{GammaWeights, OrderFunction, Trajectory};
use statrs::function::gamma::gamma;
use fracvar_core::varcalc::{Candidate, Lagrangian, Problem, TerminalConstraint, TerminalCost};

pub const ALPHA: &str = "t^2/2";
pub const BETA: &str = "(tau + 1)/12";
/// The target `t^(1-alpha)/(2 Gamma(2-alpha)) + (10-t)^(1-beta)/(2 Gamma(2-beta))`.
pub const TARGET: &str =
    "t^(1 - t^2/2)/(2*gammafn(2 - t^2/2)) + (10 - t)^(1 - (t + 1)/12)/(2*gammafn(2 - (t + 1)/12))";
pub const WINDOW: (f64, f64) = (0.0, 1.4);

/// `2 alpha(t) - 1 + (v - target)^power` on `[0, 10]`, `x(0) = 0`.
pub fn example(power: u32) -> Problem {
    let l = format!("2*(t^2/2) - 1 + (v - ({TARGET}))^{power}");
    let d3 = format!("{power}*(v - ({TARGET}))^{}", power - 1);
    Problem {
        a: 0.0,
        b: 10.0,
        x_a: 0.0,
        alpha: OrderFunction::parse(ALPHA, WINDOW).unwrap(),
        beta: OrderFunction::parse(BETA, WINDOW).unwrap(),
        weights: GammaWeights::new(0.5, 0.5).unwrap(),
        lagrangian: Lagrangian::parse(&l, Some("0"), Some(&d3), WINDOW).unwrap(),
        terminal_cost: TerminalCost::zero(),
        constraint: TerminalConstraint::Free,
        enforce_on: Some(WINDOW),
    }
}

pub fn identity(t_end: f64) -> Candidate {
    Candidate {
        x: Trajectory::parse("t", Some("1"), (0.0, 10.0)).unwrap(),
        t_end,
    }
}

/// Closed form of the combined Caputo derivative of `x(t) = t`.
pub fn target(t: f64) -> f64 {
    let a = t * t / 2.0;
    let b = (t + 1.0) / 12.0;
    t.powf(1.0 - a) / (2.0 * gamma(2.0 - a)) + (10.0 - t).powf(1.0 - b) / (2.0 * gamma(2.0 - b))
}

fn binom(n: u32, j: u32) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Terms `C(n,j) t^(n-j) (b-t)^(mu+j) / (Gamma(mu) (mu+j))` of the right RL
/// integral of `tau^n`, as `(coefficient, power of t, power of (b-t))`.
fn right_terms(n: u32, mu: f64) -> Vec<(f64, i32, f64)> {
    let g = statrs::function::gamma::gamma(mu);
    (0..=n)
        .map(|j| (binom(n, j) / (g * (mu + f64::from(j))), (n - j) as i32, mu + f64::from(j)))
        .collect()
}

/// Constant-order closed forms on `x(t) = t^n`, `n >= 1`, over `[0, b]`.
pub mod constant {
    use statrs::function::gamma::gamma;

    pub fn left_integral(n: u32, alpha: f64, t: f64) -> f64 {
        let n = f64::from(n);
        gamma(n + 1.0) / gamma(n + 1.0 + alpha) * t.powf(n + alpha)
    }

    /// Left RL and left Caputo derivatives coincide since `x(0) = 0`.
    pub fn left_derivative(n: u32, alpha: f64, t: f64) -> f64 {
        let n = f64::from(n);
        gamma(n + 1.0) / gamma(n + 1.0 - alpha) * t.powf(n - alpha)
    }

    pub fn right_integral(n: u32, alpha: f64, t: f64, b: f64) -> f64 {
        super::right_terms(n, alpha)
            .into_iter()
            .map(|(c, p, q)| c * t.powi(p) * (b - t).powf(q))
            .sum()
    }

    /// Textbook right RL derivative `-d/dt tI_b^(1-alpha) x`.
    pub fn right_rl_derivative(n: u32, alpha: f64, t: f64, b: f64) -> f64 {
        let d: f64 = super::right_terms(n, 1.0 - alpha)
            .into_iter()
            .map(|(c, p, q)| {
                let dp = if p > 0 { f64::from(p) * t.powi(p - 1) * (b - t).powf(q) } else { 0.0 };
                c * (dp - q * t.powi(p) * (b - t).powf(q - 1.0))
            })
            .sum();
        -d
    }

    /// `+int_t^b (tau - t)^(-alpha) x'(tau) / Gamma(1 - alpha)`.
    pub fn right_caputo(n: u32, alpha: f64, t: f64, b: f64) -> f64 {
        f64::from(n) * right_integral(n - 1, 1.0 - alpha, t, b)
    }
}
