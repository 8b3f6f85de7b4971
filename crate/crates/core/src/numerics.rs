//! Special functions, the weakly singular quadrature engine and
//! finite-difference helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_R: f64 = 10.900511;
const LANCZOS_DK: [f64; 11] = [
    2.485_740_891_387_535_655_46e-5,
    1.051_423_785_817_219_742_10,
    -3.456_870_972_220_166_554_69,
    4.512_277_094_668_948_237_00,
    -2.982_852_253_235_766_557_21,
    1.056_397_115_771_267_130_77,
    -1.954_287_731_916_458_695_83e-1,
    1.709_705_434_044_412_243_07e-2,
    -5.719_261_174_043_057_812_83e-4,
    4.633_994_733_599_056_367_08e-6,
    -2.719_949_084_886_077_039_10e-9,
];
const TWO_SQRT_E_OVER_PI: f64 = 1.860_382_734_205_265_717_336_249_247_266_663_112_059_421_841_408_575_5;

/// Gamma function for positive real arguments.
///
/// Integers up to 171 are returned as exact factorials; everything else goes
/// through a Lanczos approximation (Pugh's coefficients), with the reflection
/// formula below 1/2.
pub fn gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(
            format!("gammafn({z})"),
            "argument must be positive and finite",
        ));
    }
    if z.fract() == 0.0 && z <= 171.0 {
        let n = z as u32;
        return Ok((1..n).fold(1.0, |acc, k| acc * k as f64));
    }
    Ok(lanczos(z))
}

fn lanczos(x: f64) -> f64 {
    use std::f64::consts::{E, PI};
    if x < 0.5 {
        let s = LANCZOS_DK
            .iter()
            .enumerate()
            .skip(1)
            .fold(LANCZOS_DK[0], |s, (i, &dk)| s + dk / (i as f64 - x));
        PI / ((PI * x).sin()
            * s
            * TWO_SQRT_E_OVER_PI
            * ((0.5 - x + LANCZOS_R) / E).powf(0.5 - x))
    } else {
        let s = LANCZOS_DK
            .iter()
            .enumerate()
            .skip(1)
            .fold(LANCZOS_DK[0], |s, (i, &dk)| s + dk / (x + i as f64 - 1.0));
        s * TWO_SQRT_E_OVER_PI * ((x - 0.5 + LANCZOS_R) / E).powf(x - 0.5)
    }
}

/// Settings for [`singular_integral`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Base number of cells on the graded mesh.
    pub cells: usize,
    /// Mesh grading exponent; nodes cluster at the singular endpoint.
    pub grading: f64,
    /// Relative change between successive estimates that counts as converged.
    pub rel_tol: f64,
    pub max_doublings: u32,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            cells: 64,
            grading: 2.0,
            rel_tol: 1e-6,
            max_doublings: 10,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells < 4 {
            return Err(Error::Config(format!("cells must be >= 4, got {}", self.cells)));
        }
        if !(self.grading >= 1.0) {
            return Err(Error::Config(format!("grading must be >= 1, got {}", self.grading)));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Config(format!("rel_tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if self.max_doublings > 16 {
            return Err(Error::Config(format!(
                "max_doublings must be <= 16, got {}",
                self.max_doublings
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffScheme {
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiniteDiffConfig {
    /// Relative step: h = step_scale * max(1, |t|).
    pub step_scale: f64,
    pub scheme: DiffScheme,
}

impl Default for FiniteDiffConfig {
    fn default() -> Self {
        Self {
            step_scale: 1e-5,
            scheme: DiffScheme::Central,
        }
    }
}

impl FiniteDiffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1e-8..=1e-2).contains(&self.step_scale) {
            return Err(Error::Config(format!(
                "step_scale must lie in [1e-8, 1e-2], got {}",
                self.step_scale
            )));
        }
        Ok(())
    }

    pub fn step(&self, t: f64) -> f64 {
        self.step_scale * t.abs().max(1.0)
    }
}

/// `(f(t+h) - f(t-h)) / 2h`.
pub fn central_diff<F>(mut f: F, t: f64, cfg: &FiniteDiffConfig) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let h = cfg.step(t);
    let hi = f(t + h)?;
    let lo = f(t - h)?;
    Ok((hi - lo) / (2.0 * h))
}

/// Outcome of an adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadStats {
    /// Doubling level of the returned estimate (0 = base mesh).
    pub level: u32,
    /// Total number of midpoint cells at that level.
    pub cells: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub stats: QuadStats,
}

/// Per-piece integrals over a mesh split at breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceQuadrature {
    pub values: Vec<f64>,
    /// Piece boundaries in `s`, `values.len() + 1` entries from 0 to length.
    pub bounds: Vec<f64>,
    pub stats: QuadStats,
}

impl PieceQuadrature {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Grading actually used for an integrand behaving like `s^(mu0 - 1)` near 0.
///
/// The mapped integrand `s = L u^r` behaves like `u^(r mu0 - 1)`; once
/// `r mu0 >= 2` the midpoint error is a clean `h^2` series and Richardson
/// extrapolation applies.
pub fn effective_grading(grading: f64, mu0: f64) -> f64 {
    const MAX_GRADING: f64 = 50.0;
    if mu0 >= 1.0 || !mu0.is_finite() {
        return grading;
    }
    let needed = 2.0 / mu0.max(1e-3);
    grading.max(needed).min(MAX_GRADING)
}

struct Mesh {
    length: f64,
    grading: f64,
    /// Piece boundaries in the mapped coordinate u in [0, 1].
    u_bounds: Vec<f64>,
    /// Cells per piece at level 0.
    base: Vec<usize>,
}

impl Mesh {
    fn new(length: f64, mu0: f64, breaks: &[f64], cfg: &QuadratureConfig) -> Result<Mesh> {
        cfg.validate()?;
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Config(format!("integration length must be positive, got {length}")));
        }
        let grading = effective_grading(cfg.grading, mu0);
        let mut u_bounds = vec![0.0];
        let mut interior: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|&b| b > 0.0 && b < length)
            .map(|b| (b / length).powf(1.0 / grading))
            .collect();
        interior.sort_by(f64::total_cmp);
        for u in interior {
            if u > *u_bounds.last().unwrap() && u < 1.0 {
                u_bounds.push(u);
            }
        }
        u_bounds.push(1.0);
        let base = u_bounds
            .windows(2)
            .map(|w| ((cfg.cells as f64 * (w[1] - w[0])).ceil() as usize).max(1))
            .collect();
        Ok(Mesh {
            length,
            grading,
            u_bounds,
            base,
        })
    }

    fn s_bounds(&self) -> Vec<f64> {
        self.u_bounds
            .iter()
            .map(|&u| self.length * u.powf(self.grading))
            .collect()
    }

    fn cells(&self, level: u32) -> usize {
        self.base.iter().map(|n| n << level).sum()
    }

    /// Mapped midpoint sums for every piece at `level`, plus the sum of |f|.
    fn sums<F>(&self, f: &mut F, level: u32, out: &mut [f64]) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let r = self.grading;
        let mut mass = 0.0;
        for (k, w) in self.u_bounds.windows(2).enumerate() {
            let n = self.base[k] << level;
            let du = (w[1] - w[0]) / n as f64;
            let mut acc = 0.0;
            for j in 0..n {
                let u = w[0] + (j as f64 + 0.5) * du;
                let s = self.length * u.powf(r);
                let value = f(s)?;
                if !value.is_finite() {
                    return Err(Error::NonFinite { node: s, value });
                }
                let jac = r * self.length * u.powf(r - 1.0);
                acc += value * jac;
                mass += value.abs() * jac;
            }
            out[k] = acc * du;
        }
        Ok(mass)
    }
}

fn richardson(fine: &[f64], coarse: &[f64], out: &mut [f64]) {
    for ((o, &f), &c) in out.iter_mut().zip(fine).zip(coarse) {
        *o = (4.0 * f - c) / 3.0;
    }
}

/// Integrates `f` over `(0, length]` where `f(s)` behaves like
/// `s^(mu(s) - 1) g(s)` near `s = 0` with `mu0 = mu(0)` in `(0, 1]`.
///
/// The rule is the composite midpoint rule on the graded mesh
/// `s_j = length (j/N)^r`, taken in the mapped coordinate `u = (s/length)^(1/r)`
/// so the singular endpoint is never evaluated. The mesh is doubled until two
/// successive Richardson-extrapolated estimates agree to `rel_tol`; failing
/// that, the last estimate is returned with `converged == false`.
pub fn singular_integral<F>(f: F, length: f64, mu0: f64, cfg: &QuadratureConfig) -> Result<Quadrature>
where
    F: FnMut(f64) -> Result<f64>,
{
    if length == 0.0 {
        return Ok(empty_quadrature());
    }
    let pieces = singular_pieces(f, length, mu0, &[], cfg)?;
    Ok(Quadrature {
        value: pieces.total(),
        stats: pieces.stats,
    })
}

fn empty_quadrature() -> Quadrature {
    Quadrature {
        value: 0.0,
        stats: QuadStats {
            level: 0,
            cells: 0,
            converged: true,
        },
    }
}

/// As [`singular_integral`] but with the mesh additionally split at `breaks`
/// (points of `(0, length)` where the integrand may have a kink or jump),
/// returning the integral over each piece separately.
pub fn singular_pieces<F>(
    mut f: F,
    length: f64,
    mu0: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<PieceQuadrature>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mesh = Mesh::new(length, mu0, breaks, cfg)?;
    let k = mesh.base.len();
    let mut coarse = vec![0.0; k];
    let mut fine = vec![0.0; k];
    let mut prev_rich = vec![0.0; k];
    let mut rich = vec![0.0; k];
    mesh.sums(&mut f, 0, &mut coarse)?;
    if cfg.max_doublings == 0 {
        return Ok(PieceQuadrature {
            values: coarse,
            bounds: mesh.s_bounds(),
            stats: QuadStats {
                level: 0,
                cells: mesh.cells(0),
                converged: false,
            },
        });
    }
    for level in 1..=cfg.max_doublings {
        let mass = mesh.sums(&mut f, level, &mut fine)?;
        richardson(&fine, &coarse, &mut rich);
        if level >= 2 {
            let delta: f64 = rich.iter().zip(&prev_rich).map(|(a, b)| (a - b).abs()).sum();
            if delta <= cfg.rel_tol * mass {
                return Ok(PieceQuadrature {
                    values: rich,
                    bounds: mesh.s_bounds(),
                    stats: QuadStats {
                        level,
                        cells: mesh.cells(level),
                        converged: true,
                    },
                });
            }
        }
        std::mem::swap(&mut coarse, &mut fine);
        std::mem::swap(&mut prev_rich, &mut rich);
    }
    Ok(PieceQuadrature {
        values: prev_rich,
        bounds: mesh.s_bounds(),
        stats: QuadStats {
            level: cfg.max_doublings,
            cells: mesh.cells(cfg.max_doublings),
            converged: false,
        },
    })
}

/// Evaluates the same scheme as [`singular_pieces`] at a prescribed doubling
/// level, without adaptivity. Finite differences of integrals use this so both
/// stencil points see the same mesh.
pub fn singular_pieces_at_level<F>(
    mut f: F,
    length: f64,
    mu0: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
    level: u32,
) -> Result<PieceQuadrature>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mesh = Mesh::new(length, mu0, breaks, cfg)?;
    let k = mesh.base.len();
    let mut fine = vec![0.0; k];
    mesh.sums(&mut f, level, &mut fine)?;
    let values = if level == 0 {
        fine
    } else {
        let mut coarse = vec![0.0; k];
        mesh.sums(&mut f, level - 1, &mut coarse)?;
        let mut rich = vec![0.0; k];
        richardson(&fine, &coarse, &mut rich);
        rich
    };
    Ok(PieceQuadrature {
        values,
        bounds: mesh.s_bounds(),
        stats: QuadStats {
            level,
            cells: mesh.cells(level),
            converged: true,
        },
    })
}

/// Adaptive composite Simpson rule on `[a, b]` for smooth integrands.
///
/// Starts at `min_panels` (rounded up to even) and doubles until successive
/// estimates differ by at most `rel_tol * max(1, |S|)`. Function values are
/// reused across doublings.
pub fn simpson<F>(
    mut f: F,
    a: f64,
    b: f64,
    min_panels: usize,
    rel_tol: f64,
    max_doublings: u32,
) -> Result<Quadrature>
where
    F: FnMut(f64) -> Result<f64>,
{
    if a == b {
        return Ok(empty_quadrature());
    }
    let mut n = min_panels.max(2);
    n += n % 2;
    let h0 = (b - a) / n as f64;
    let mut values = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = if i == n { b } else { a + h0 * i as f64 };
        values.push(f(t)?);
    }
    let mut estimate = simpson_sum(&values, (b - a) / n as f64);
    for level in 1..=max_doublings {
        let n2 = 2 * n;
        let h = (b - a) / n2 as f64;
        let mut refined = Vec::with_capacity(n2 + 1);
        for (i, &v) in values.iter().enumerate() {
            refined.push(v);
            if i < n {
                refined.push(f(a + h * (2 * i + 1) as f64)?);
            }
        }
        let next = simpson_sum(&refined, h);
        values = refined;
        n = n2;
        let done = (next - estimate).abs() <= rel_tol * next.abs().max(1.0);
        estimate = next;
        if done {
            return Ok(Quadrature {
                value: estimate,
                stats: QuadStats {
                    level,
                    cells: n,
                    converged: true,
                },
            });
        }
    }
    Ok(Quadrature {
        value: estimate,
        stats: QuadStats {
            level: max_doublings,
            cells: n,
            converged: false,
        },
    })
}

fn simpson_sum(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    let mut acc = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn gamma_known_values() {
        assert_eq!(gamma(1.0).unwrap(), 1.0);
        assert_eq!(gamma(5.0).unwrap(), 24.0);
        let half = gamma(0.5).unwrap();
        assert!(rel(half, PI.sqrt()) < 1e-14);
        assert!((half - 1.772_453_850_905_52).abs() < 1e-13);
        // Reflection at z = 1/2: Γ(1/2)^2 = π / sin(π/2).
        assert!(rel(half * half, PI) < 1e-14);
        // Γ(1/3) from tables.
        assert!(rel(gamma(1.0 / 3.0).unwrap(), 2.678_938_534_707_747_6) < 1e-13);
    }

    #[test]
    fn gamma_rejects_nonpositive() {
        assert!(gamma(0.0).is_err());
        assert!(gamma(-1.5).is_err());
        assert!(gamma(f64::NAN).is_err());
    }

    #[test]
    fn gamma_recurrence_and_reflection() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let z: f64 = rng.gen_range(0.1..10.0);
            let lhs = gamma(z + 1.0).unwrap();
            let rhs = z * gamma(z).unwrap();
            assert!(rel(lhs, rhs) < 1e-12, "z = {z}");
        }
        for _ in 0..50 {
            let z: f64 = rng.gen_range(0.01..0.99);
            let lhs = gamma(z).unwrap() * gamma(1.0 - z).unwrap();
            assert!(rel(lhs, PI / (PI * z).sin()) < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn gamma_matches_reference_implementation() {
        for i in 1..=400 {
            let z = i as f64 * 0.05;
            let reference = statrs::function::gamma::gamma(z);
            assert!(rel(gamma(z).unwrap(), reference) < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::default().validate().is_ok());
        let bad = QuadratureConfig { cells: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig { grading: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig { rel_tol: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig { max_doublings: 17, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(FiniteDiffConfig { step_scale: 1e-9, ..Default::default() }.validate().is_err());
        assert!(FiniteDiffConfig { step_scale: 1e-1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn inverse_square_root() {
        let cfg = QuadratureConfig::default();
        let q = singular_integral(|s| Ok(s.powf(-0.5)), 1.0, 0.5, &cfg).unwrap();
        assert!(q.stats.converged);
        assert!(rel(q.value, 2.0) < 1e-6, "{}", q.value);
    }

    #[test]
    fn regular_integrand() {
        let cfg = QuadratureConfig::default();
        let q = singular_integral(|_| Ok(1.0), 3.0, 1.0, &cfg).unwrap();
        assert!(rel(q.value, 3.0) < 1e-12);
    }

    #[test]
    fn weighted_polynomial() {
        let cfg = QuadratureConfig::default();
        let q = singular_integral(|s| Ok(s.powf(-0.5) * (1.0 - s)), 1.0, 0.5, &cfg).unwrap();
        assert!(rel(q.value, 4.0 / 3.0) < 1e-6, "{}", q.value);
    }

    #[test]
    fn power_family_matches_closed_form() {
        let cfg = QuadratureConfig::default();
        for &mu in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            for &length in &[0.5, 1.0, 10.0] {
                let q = singular_integral(|s| Ok(s.powf(mu - 1.0)), length, mu, &cfg).unwrap();
                let exact = length.powf(mu) / mu;
                assert!(rel(q.value, exact) < cfg.rel_tol, "mu={mu} L={length}: {}", q.value);
            }
        }
    }

    #[test]
    fn doubling_shrinks_error() {
        let cfg = QuadratureConfig::default();
        let f = |s: f64| Ok(s.powf(-0.7) * (1.0 + s * s));
        let exact = 1.0 / 0.3 + 1.0 / 2.3;
        let mut last = f64::INFINITY;
        for level in 1..=5 {
            let q = singular_pieces_at_level(f, 1.0, 0.3, &[], &cfg, level).unwrap();
            let err = (q.total() - exact).abs();
            assert!(err < last, "level {level}: {err} !< {last}");
            last = err;
        }
    }

    #[test]
    fn pieces_respect_breakpoints() {
        let cfg = QuadratureConfig::default();
        // Step function: 1 on (0, 0.3), 2 on (0.3, 1).
        let f = |s: f64| Ok(if s < 0.3 { 1.0 } else { 2.0 });
        let q = singular_pieces(f, 1.0, 1.0, &[0.3], &cfg).unwrap();
        assert_eq!(q.values.len(), 2);
        assert!((q.values[0] - 0.3).abs() < 1e-12);
        assert!((q.values[1] - 1.4).abs() < 1e-12);
        assert!((q.bounds[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let cfg = QuadratureConfig::default();
        let err = singular_integral(|s| Ok(if s > 0.5 { f64::NAN } else { 1.0 }), 1.0, 1.0, &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { node, .. } if node > 0.5));
    }

    #[test]
    fn convergence_failure_is_a_flag() {
        let cfg = QuadratureConfig {
            max_doublings: 2,
            rel_tol: 1e-15,
            ..Default::default()
        };
        let q = singular_integral(|s| Ok((40.0 * s).sin()), 1.0, 1.0, &cfg).unwrap();
        assert!(!q.stats.converged);
        assert!(q.value.is_finite());
    }

    #[test]
    fn central_difference_cases() {
        let cfg = FiniteDiffConfig::default();
        let d = central_diff(|u| Ok(u * u), 3.0, &cfg).unwrap();
        assert!((d - 6.0).abs() < 1e-9);
        assert_eq!(central_diff(|_| Ok(4.2), 1.7, &cfg).unwrap(), 0.0);
        let d = central_diff(|u| Ok(u * u * u), 1.0, &cfg).unwrap();
        assert!((d - 3.0).abs() < 1e-8);
    }

    #[test]
    fn simpson_integrates_cubic_exactly() {
        let q = simpson(|t| Ok(t * t * t - t), 0.0, 2.0, 4, 1e-12, 4).unwrap();
        assert!((q.value - 2.0).abs() < 1e-12);
        assert!(q.stats.converged);
    }
}
