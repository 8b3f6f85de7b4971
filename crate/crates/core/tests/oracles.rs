//! Every operator kind against classical closed forms at constant order.

mod common;

use common::constant;
use fracvar_core::fracops::*;

const ORDERS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const POINTS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const B: f64 = 1.0;
const T_END: f64 = 0.9;

fn power(n: u32) -> Trajectory {
    let dx = if n == 1 { "1".to_string() } else { format!("{n}*t^{}", n - 1) };
    Trajectory::parse(&format!("t^{n}"), Some(&dx), (0.0, B)).unwrap()
}

fn close(kind: OperatorKind, n: u32, alpha: f64, t: f64, got: f64, want: f64) {
    let tol = match kind {
        OperatorKind::LeftRlDerivative
        | OperatorKind::RightRlDerivative
        | OperatorKind::CombinedRl
        | OperatorKind::DualDerivative => 1e-3,
        _ => 1e-4,
    };
    let err = (got - want).abs() / want.abs().max(1.0);
    assert!(
        err <= tol,
        "{kind} of t^{n}, alpha = {alpha}, t = {t}: got {got}, want {want}, error {err:e}"
    );
}

fn check_kind(kind: OperatorKind) {
    let cfg = NumericsConfig::default();
    let g = GammaWeights::new(0.3, 0.7).unwrap();
    let span = Span { a: 0.0, b: B };
    for n in [1, 2] {
        let x = power(n);
        for alpha in ORDERS {
            let ord = OrderFunction::constant(alpha).unwrap();
            // The second order of combined kinds differs from the first.
            let beta_val = 1.0 - alpha / 2.0;
            let beta = OrderFunction::constant(beta_val).unwrap();
            for t in POINTS {
                let (got, want) = match kind {
                    OperatorKind::LeftRlIntegral => (
                        left_rl_integral(&x, &ord, 0.0, t, &cfg),
                        constant::left_integral(n, alpha, t),
                    ),
                    OperatorKind::RightRlIntegral => (
                        right_rl_integral(&x, &ord, t, B, &cfg),
                        constant::right_integral(n, alpha, t, B),
                    ),
                    OperatorKind::LeftRlDerivative => (
                        left_rl_derivative(&x, &ord, 0.0, t, &cfg),
                        constant::left_derivative(n, alpha, t),
                    ),
                    OperatorKind::RightRlDerivative => (
                        right_rl_derivative(&x, &ord, t, B, &cfg),
                        constant::right_rl_derivative(n, alpha, t, B),
                    ),
                    OperatorKind::LeftCaputo => (
                        left_caputo(&x, &ord, 0.0, t, &cfg),
                        constant::left_derivative(n, alpha, t),
                    ),
                    OperatorKind::RightCaputo => (
                        right_caputo(&x, &ord, t, B, &cfg),
                        constant::right_caputo(n, alpha, t, B),
                    ),
                    OperatorKind::CombinedCaputo => (
                        combined_caputo(&x, &ord, &beta, g, span, t, &cfg),
                        0.3 * constant::left_derivative(n, alpha, t) + 0.7 * constant::right_caputo(n, beta_val, t, B),
                    ),
                    OperatorKind::CombinedRl => (
                        combined_rl(&x, &ord, &beta, g, span, t, &cfg),
                        0.3 * constant::left_derivative(n, alpha, t)
                            + 0.7 * constant::right_rl_derivative(n, beta_val, t, B),
                    ),
                    OperatorKind::DualDerivative => (
                        dual_derivative(&x, &ord, &beta, g, 0.0, T_END, t, &cfg),
                        0.7 * constant::left_derivative(n, beta_val, t)
                            + 0.3 * constant::right_rl_derivative(n, alpha, t, T_END),
                    ),
                };
                let got = got.unwrap();
                assert!(got.converged, "{kind} t^{n} alpha = {alpha} t = {t} did not converge");
                close(kind, n, alpha, t, got.value, want);
            }
        }
    }
}

#[test]
fn left_rl_integral_closed_form() {
    check_kind(OperatorKind::LeftRlIntegral);
}

#[test]
fn right_rl_integral_closed_form() {
    check_kind(OperatorKind::RightRlIntegral);
}

#[test]
fn left_rl_derivative_closed_form() {
    check_kind(OperatorKind::LeftRlDerivative);
}

#[test]
fn right_rl_derivative_closed_form() {
    check_kind(OperatorKind::RightRlDerivative);
}

#[test]
fn left_caputo_closed_form() {
    check_kind(OperatorKind::LeftCaputo);
}

#[test]
fn right_caputo_closed_form() {
    check_kind(OperatorKind::RightCaputo);
}

#[test]
fn combined_caputo_closed_form() {
    check_kind(OperatorKind::CombinedCaputo);
}

#[test]
fn combined_rl_closed_form() {
    check_kind(OperatorKind::CombinedRl);
}

#[test]
fn dual_derivative_closed_form() {
    check_kind(OperatorKind::DualDerivative);
}

#[test]
fn oracle_sanity() {
    // Half-order integral of t: 4 t^1.5 / (3 sqrt(pi)).
    let v = constant::left_integral(1, 0.5, 0.64);
    assert!((v - 4.0 * 0.512 / (3.0 * std::f64::consts::PI.sqrt())).abs() < 1e-14);
    // Right integral of order 1 is a plain integral.
    assert!((constant::right_integral(2, 1.0, 0.25, 1.0) - (1.0 - 0.25f64.powi(3)) / 3.0).abs() < 1e-14);
    // Right RL derivative of order -> 0 tends to x itself.
    assert!((constant::right_rl_derivative(2, 1e-9, 0.5, 1.0) - 0.25).abs() < 1e-6);
}

#[test]
fn rl_derivative_of_constant_is_not_zero() {
    let cfg = NumericsConfig::default();
    let one = Trajectory::parse("3", Some("0"), (0.0, B)).unwrap();
    for alpha in ORDERS {
        let ord = OrderFunction::constant(alpha).unwrap();
        let g = statrs::function::gamma::gamma(1.0 - alpha);
        for t in POINTS {
            let left = left_rl_derivative(&one, &ord, 0.0, t, &cfg).unwrap().value;
            let want = 3.0 * t.powf(-alpha) / g;
            assert!((left - want).abs() <= 1e-3 * want, "alpha = {alpha}, t = {t}: {left} vs {want}");
            let right = right_rl_derivative(&one, &ord, t, B, &cfg).unwrap().value;
            let want = 3.0 * (B - t).powf(-alpha) / g;
            assert!((right - want).abs() <= 1e-3 * want, "alpha = {alpha}, t = {t}: {right} vs {want}");
            assert_eq!(left_caputo(&one, &ord, 0.0, t, &cfg).unwrap().value, 0.0);
            assert_eq!(right_caputo(&one, &ord, t, B, &cfg).unwrap().value, 0.0);
        }
    }
}
