//! Closed-loop equilibrium solver.
//!
//! The symmetric closed-loop Nash equilibrium is pinned down by a system of
//! ten algebraic equations (seven value-function coefficient equations plus
//! three consistency equations). The system reduces to a single scalar
//! equation Phi_N(lambda, y) = 0 in the rescaled variable y = d/sqrt(gamma
//! lambda). At lambda = 0 the admissible root y = delta*_N is a root of a
//! cubic polynomial P_N in y^2, selected among the Cardano candidates by the
//! limiting function Gamma(N, .). For lambda > 0 the root is continued from
//! delta*_N by a safeguarded Newton iteration, and all ten coefficients are
//! recovered from it in closed form.
//!
//! Numerical conditioning: Phi_N is never evaluated in terms of d directly;
//! everything is expressed in y with sqrt(gamma*lambda) grouped, and the
//! lambda = 0 limit has its own entry point ([`phi_limit`]).

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EquilibriumKind, ValidatedParams};

/// Relative tolerance on the scalar equation at the solution.
pub const PHI_TOL: f64 = 1e-12;
/// Relative tolerance on the ten equation residuals for a converged solve.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Relative tolerance of the Gamma root filter.
pub const GAMMA_FILTER_TOL: f64 = 1e-6;
const MAX_ITERATIONS: u32 = 200;

/// The ten equilibrium coefficients, the intermediate h-constants, and the
/// rescaled root delta they were recovered from.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoefficientSet {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub a_bar: f64,
    pub b_bar: f64,
    pub c_bar: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h4: f64,
    pub delta: f64,
}

impl CoefficientSet {
    /// Relative trading speed of the symmetric equilibrium.
    pub fn m_rate(&self, n_agents: u32) -> f64 {
        self.c_bar - (f64::from(n_agents) - 1.0) * self.b_bar
    }
}

/// Linear feedback policy: trade toward the aim portfolio
/// `m_aim * mu / gamma` at relative speed `m_rate`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Policy {
    /// Relative trading speed (1/day, > 0).
    pub m_rate: f64,
    /// Aim multiplier (dimensionless).
    pub m_aim: f64,
    pub kind: EquilibriumKind,
}

/// Diagnostics of a closed-loop solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveReport {
    /// Root of the scalar equation (rescaled variable).
    pub delta: f64,
    /// Relative residuals of the ten equations, in display order:
    /// a, b, d, g, c, e, f, then the three consistency equations.
    pub residuals: [f64; 10],
    /// Relative residual of the alternate scalar d-equation (k1 form).
    pub alt_d_residual: f64,
    /// Relative residual |Phi| / scale at the returned root.
    pub phi_residual: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Relative discrepancy between the nested closed-form c and the
    /// rearranged c-equation; a diagnostics warning above 1e-8.
    pub c_cross_check: f64,
}

/// Relative residuals of the full equation system.
#[derive(Debug, Clone, Copy)]
pub struct SystemResiduals {
    /// Display order: a, b, d, g, c, e, f, consistency (a-bar, b-bar, c-bar).
    pub equations: [f64; 10],
    /// The alternate scalar d-equation (k1 form), as an independent check.
    pub alt_d: f64,
}

impl SystemResiduals {
    pub fn max_equation(&self) -> f64 {
        self.equations.iter().cloned().fold(0.0, f64::max)
    }
}

/// Cubic polynomial in z = y^2 whose admissible root yields delta*_N.
/// Stored lowest degree first: P(z) = c[0] + c[1] z + c[2] z^2 + c[3] z^3.
#[derive(Debug, Clone, Copy)]
pub struct Cubic {
    pub coeffs: [f64; 4],
}

impl Cubic {
    pub fn eval(&self, z: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs;
        ((c3 * z + c2) * z + c1) * z + c0
    }

    fn eval_derivative(&self, z: f64) -> f64 {
        let [_, c1, c2, c3] = self.coeffs;
        (3.0 * c3 * z + 2.0 * c2) * z + c1
    }

    fn eval_complex(&self, z: Complex64) -> Complex64 {
        let [c0, c1, c2, c3] = self.coeffs;
        ((z * c3 + c2) * z + c1) * z + c0
    }

    fn eval_derivative_complex(&self, z: Complex64) -> Complex64 {
        let [_, c1, c2, c3] = self.coeffs;
        (z * 3.0 * c3 + 2.0 * c2) * z + c1
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Coefficients of P_N as a cubic in z = y^2. Exact integer arithmetic
/// (i128), rounded to f64 once.
pub fn p_cubic(n_agents: u32) -> Cubic {
    let n = i128::from(n_agents);
    let p = |k: u32| n.pow(k);
    let c3 = 8 * p(6);
    let c2 = -16 * p(7) + 4 * p(6) + 48 * p(5) - 52 * p(4) + 8 * p(3) + 20 * p(2) - 8 * n - 4;
    let c1 = 8 * p(8) - 20 * p(7) + 46 * p(6) - 112 * p(5) + 114 * p(4) - 4 * p(3) - 46 * p(2)
        + 8 * n
        + 6;
    let c0 = -9 * p(8) + 48 * p(7) - 100 * p(6) + 96 * p(5) - 30 * p(4) - 16 * p(3) + 12 * p(2) - 1;
    Cubic {
        coeffs: [c0 as f64, c1 as f64, c2 as f64, c3 as f64],
    }
}

/// Upper end of the admissible interval for z = y^2: 2 N^2 (N-1)/(3N+1).
pub fn z_bound(n_agents: u32) -> f64 {
    let n = f64::from(n_agents);
    2.0 * n * n * (n - 1.0) / (3.0 * n + 1.0)
}

/// Upper end of the admissible interval for y: sqrt(2) N sqrt((N-1)/(3N+1)).
pub fn delta_star_bound(n_agents: u32) -> f64 {
    z_bound(n_agents).sqrt()
}

/// All three (complex) roots of a cubic via Cardano's method, polished by a
/// couple of Newton steps. Residual |P(root)| <= 1e-9 * max|coeff| on return.
pub fn cardano_roots(cubic: &Cubic) -> Result<[Complex64; 3]> {
    let [c0, c1, c2, c3] = cubic.coeffs;
    if c3 == 0.0 || !c3.is_finite() {
        return Err(Error::Domain(
            "cardano: leading coefficient is zero or non-finite".into(),
        ));
    }
    let a = c2 / c3;
    let b = c1 / c3;
    let c = c0 / c3;
    // depressed cubic t^3 + p t + q, z = t - a/3
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
    let shift = -a / 3.0;
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        let t0 = u + v;
        let re = -t0 / 2.0;
        let im = 3f64.sqrt() / 2.0 * (u - v).abs();
        [
            Complex64::new(t0 + shift, 0.0),
            Complex64::new(re + shift, im),
            Complex64::new(re + shift, -im),
        ]
    } else {
        // three real roots
        let r = (-(p / 3.0) * (p / 3.0) * (p / 3.0)).sqrt();
        let cosarg = (-q / 2.0 / r).clamp(-1.0, 1.0);
        let theta = cosarg.acos();
        let m = 2.0 * (-p / 3.0).sqrt();
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let ang = (theta + 2.0 * std::f64::consts::PI * k as f64) / 3.0;
            *slot = Complex64::new(m * ang.cos() + shift, 0.0);
        }
        out
    };
    // Newton polish; large-N coefficient magnitudes make this worthwhile.
    for root in roots.iter_mut() {
        for _ in 0..3 {
            let f = cubic.eval_complex(*root);
            let df = cubic.eval_derivative_complex(*root);
            if df.norm() == 0.0 {
                break;
            }
            let step = f / df;
            *root -= step;
            if step.norm() <= 1e-15 * root.norm().max(1.0) {
                break;
            }
        }
    }
    Ok(roots)
}

/// Radicand of the shared square root in the limiting system:
/// (2N^3 - 2N^2 - (3N+1) y^2) / ((N-1)(N+1)^2).
fn limit_radicand(n: f64, y: f64) -> f64 {
    (2.0 * n.powi(3) - 2.0 * n * n - (3.0 * n + 1.0) * y * y) / ((n - 1.0) * (n + 1.0) * (n + 1.0))
}

/// The radical/polynomial split of Gamma(N, y): returns
/// (radical coefficient A, polynomial part B, radicand R), so that
/// Gamma = A sqrt(R) + B. Squaring the separated radical reproduces the cubic:
/// B^2 - A^2 R = 2 N^6 P_N(y^2).
pub fn gamma_limit_parts(n_agents: u32, y: f64) -> Result<(f64, f64, f64)> {
    let n = f64::from(n_agents);
    let rad = limit_radicand(n, y);
    if rad < 0.0 {
        return Err(Error::Domain(format!(
            "gamma_limit radicand negative: 2N^3-2N^2-(3N+1)y^2 < 0 at y = {y}"
        )));
    }
    let y2 = y * y;
    let radical_coeff = -3.0 * n.powi(7) + 5.0 * n.powi(6) + 2.0 * n.powi(5) - 6.0 * n.powi(4)
        + n.powi(3)
        + n * n
        + y2 * (8.0 * n.powi(6) + 4.0 * n.powi(5) - 20.0 * n.powi(4) - 14.0 * n.powi(3)
            + 10.0 * n * n
            + 10.0 * n
            + 2.0);
    let poly = y2
        * y
        * (4.0 * n.powi(6) - 24.0 * n.powi(4) - 8.0 * n.powi(3) + 18.0 * n * n + 12.0 * n + 2.0)
        + y * (-4.0 * n.powi(7) + 17.0 * n.powi(6) - 10.0 * n.powi(5) - 12.0 * n.powi(4)
            + 6.0 * n.powi(3)
            + 3.0 * n * n);
    Ok((radical_coeff, poly, rad))
}

/// Gamma(N, y): the lambda -> 0 limit numerator whose admissible root is
/// delta*_N. Domain error when the shared radicand is negative.
pub fn gamma_limit(n_agents: u32, y: f64) -> Result<f64> {
    let (a, b, rad) = gamma_limit_parts(n_agents, y)?;
    Ok(a * rad.sqrt() + b)
}

/// Magnitude scale of Gamma at y: the largest absolute displayed term.
/// Used to make the root filter tolerance relative.
fn gamma_limit_scale(n_agents: u32, y: f64) -> Result<f64> {
    let n = f64::from(n_agents);
    let rad = limit_radicand(n, y);
    if rad < 0.0 {
        return Err(Error::Domain("gamma_limit radicand negative".into()));
    }
    let s = rad.sqrt();
    let y2 = y * y;
    let y3 = y2 * y;
    let terms = [
        3.0 * n.powi(7) * s,
        4.0 * n.powi(6) * y3.abs(),
        8.0 * n.powi(6) * y2 * s,
        5.0 * n.powi(6) * s,
        4.0 * n.powi(5) * y2 * s,
        2.0 * n.powi(5) * s,
        24.0 * n.powi(4) * y3.abs(),
        20.0 * n.powi(4) * y2 * s,
        6.0 * n.powi(4) * s,
        8.0 * n.powi(3) * y3.abs(),
        14.0 * n.powi(3) * y2 * s,
        n.powi(3) * s,
        18.0 * n * n * y3.abs(),
        10.0 * n * n * y2 * s,
        n * n * s,
        10.0 * n * y2 * s,
        2.0 * y2 * s,
        4.0 * n.powi(7) * y.abs(),
        17.0 * n.powi(6) * y.abs(),
        10.0 * n.powi(5) * y.abs(),
        12.0 * n.powi(4) * y.abs(),
        6.0 * n.powi(3) * y.abs(),
        3.0 * n * n * y.abs(),
        12.0 * n * y3.abs(),
        2.0 * y3.abs(),
    ];
    Ok(terms.iter().fold(0.0, |m: f64, t| m.max(*t)))
}

/// Real Cardano candidates of P_N inside the admissible interval that also
/// pass the relative Gamma filter |Gamma| <= tol * scale. Exactly one should
/// survive at the default tolerance; the count is part of the root-selection
/// contract.
pub fn gamma_filtered_candidates(n_agents: u32, tol: f64) -> Result<Vec<f64>> {
    let roots = cardano_roots(&p_cubic(n_agents))?;
    Ok(gamma_filter_candidates(n_agents, &roots, tol))
}

fn gamma_filter_candidates(n_agents: u32, roots: &[Complex64; 3], tol: f64) -> Vec<f64> {
    let zb = z_bound(n_agents);
    let mut passing = Vec::new();
    for z in roots {
        if z.im.abs() > 1e-9 * z.norm().max(1.0) {
            continue;
        }
        let zr = z.re;
        if zr <= 0.0 || zr > zb * (1.0 + 1e-12) {
            continue;
        }
        let y = zr.sqrt();
        let (g, scale) = match (gamma_limit(n_agents, y), gamma_limit_scale(n_agents, y)) {
            (Ok(g), Ok(s)) => (g, s),
            _ => continue,
        };
        if g.abs() <= tol * scale {
            passing.push(y);
        }
    }
    passing
}

/// The unique admissible root delta*_N of the limiting scalar equation:
/// the Cardano candidate of P_N inside (0, sqrt(2) N sqrt((N-1)/(3N+1))]
/// that also annihilates Gamma(N, .). Polished on P_N before returning, so
/// repeated calls are bit-identical and accurate to machine precision.
pub fn delta_star(n_agents: u32) -> Result<f64> {
    if n_agents < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_agents must be >= 2, got {n_agents}"
        )));
    }
    let cubic = p_cubic(n_agents);
    let roots = cardano_roots(&cubic)?;
    let mut passing = gamma_filter_candidates(n_agents, &roots, GAMMA_FILTER_TOL);
    if passing.len() != 1 {
        // ambiguous: tighten by a factor 100 and retry once
        passing = gamma_filter_candidates(n_agents, &roots, GAMMA_FILTER_TOL / 100.0);
        if passing.len() != 1 {
            return Err(Error::NoAdmissibleRoot(format!(
                "{} candidates pass the Gamma filter for N = {n_agents}",
                passing.len()
            )));
        }
    }
    let mut z = passing[0] * passing[0];
    for _ in 0..8 {
        let f = cubic.eval(z);
        let df = cubic.eval_derivative(z);
        if df == 0.0 {
            break;
        }
        let step = f / df;
        z -= step;
        if step.abs() <= 1e-16 * z.abs() {
            break;
        }
    }
    Ok(z.sqrt())
}

/// Theta_N(lambda, y): the a-coefficient expressed in the rescaled variable.
fn theta(n: f64, lambda: f64, gamma: f64, rho: f64, y: f64) -> Result<f64> {
    let s = (gamma * lambda).sqrt();
    let np1_sq = (n + 1.0) * (n + 1.0);
    let rad = rho * rho
        + (8.0 * gamma * n * n - 4.0 * rho * (3.0 * n + 1.0) * y * s) / (lambda * np1_sq)
        - 4.0 * gamma * (3.0 * n + 1.0) * y * y / (lambda * (n - 1.0) * np1_sq);
    if rad < 0.0 {
        return Err(Error::Domain(format!("theta radicand negative at y = {y}")));
    }
    Ok((lambda * np1_sq * (rad.sqrt() - rho) + (6.0 * n + 2.0) * y * s) / (4.0 * n * n))
}

/// Psi_N(lambda, y): the b-coefficient expressed in the rescaled variable.
fn psi(n: f64, lambda: f64, gamma: f64, rho: f64, y: f64, theta: f64) -> Result<f64> {
    let s = (gamma * lambda).sqrt();
    let num = 2.0 * (n - 1.0) * {
        let t = theta - theta * n + 2.0 * y * s;
        t * t
    };
    let den = (n + 1.0)
        * (rho * lambda * (n * n - 1.0) + 4.0 * theta * (n - 1.0) + 2.0 * (n - 3.0) * y * s);
    if den == 0.0 {
        return Err(Error::Domain("psi denominator vanished".into()));
    }
    Ok(num / den)
}

/// Phi together with its magnitude scale (largest top-level additive term),
/// so callers can judge the residual relative to the local scale.
pub(crate) fn phi_with_scale(params: &ValidatedParams, y: f64) -> Result<(f64, f64)> {
    let n = params.n();
    let lambda = params.lambda();
    let gamma = params.gamma();
    let rho = params.rho();
    let s = (gamma * lambda).sqrt();
    let th = theta(n, lambda, gamma, rho, y)?;
    let ps = psi(n, lambda, gamma, rho, y, th)?;
    let pre = 1.0 / (lambda * (n - 1.0) * (n + 1.0) * (n + 1.0));
    let t1 = y
        * ((n + 1.0) * s * (rho * lambda * (n * n - 1.0) - 2.0 * ps)
            + gamma * lambda * ((n - 6.0) * n + 1.0) * y);
    let t2 = -2.0 * th * th * (n - 1.0) * (n - 1.0) * n;
    let t3 = th * (n - 1.0) * (n * ps + 8.0 * n * y * s + ps);
    let scale = t1.abs().max(t2.abs()).max(t3.abs());
    Ok((pre * (t1 + t2 + t3), pre * scale))
}

/// Phi_N(lambda, y): the scalar equation whose root characterizes the
/// closed-loop equilibrium. Domain errors when a radicand goes negative or a
/// denominator vanishes. For lambda = 0 use [`phi_limit`].
pub fn phi(params: &ValidatedParams, y: f64) -> Result<f64> {
    phi_with_scale(params, y).map(|(v, _)| v)
}

/// The lambda -> 0 limit of Phi_N: gamma^{3/2} Gamma(N,y) / Xi(N,y),
/// evaluated at gamma = 1 (gamma scales out of the root).
pub fn phi_limit(n_agents: u32, y: f64) -> Result<f64> {
    let n = f64::from(n_agents);
    let g = gamma_limit(n_agents, y)?;
    let rad = limit_radicand(n, y);
    let sq = rad.sqrt();
    let xi = 4.0 * (n - 1.0) * n.powi(4) * (n * n * sq - sq + n * n * y - n * y - y);
    if xi == 0.0 {
        return Err(Error::Domain("phi_limit denominator Xi vanished".into()));
    }
    Ok(g / xi)
}

/// Largest admissible y for the given parameters (where the Theta radicand
/// crosses zero), used to safeguard the bracket.
fn theta_domain_max(params: &ValidatedParams) -> f64 {
    let n = params.n();
    let lambda = params.lambda();
    let gamma = params.gamma();
    let rho = params.rho();
    let s = (gamma * lambda).sqrt();
    let np1_sq = (n + 1.0) * (n + 1.0);
    // positive root of the radicand, quadratic in y
    let a = 4.0 * gamma * (3.0 * n + 1.0) / (n - 1.0);
    let b = 4.0 * rho * (3.0 * n + 1.0) * s;
    let c = lambda * np1_sq * rho * rho + 8.0 * gamma * n * n;
    (-b + (b * b + 4.0 * a * c).sqrt()) / (2.0 * a)
}

/// Solves Phi_N(lambda, y) = 0 by a safeguarded (bracketed) Newton iteration
/// seeded at delta*_N. Returns the root and the iteration count.
pub fn solve_delta(params: &ValidatedParams) -> Result<(f64, u32)> {
    let seed = delta_star(params.n_agents())?;
    let hi_domain = theta_domain_max(params) * (1.0 - 1e-12);

    let f = |y: f64| phi_with_scale(params, y);

    // Bracket the root around the seed: walk a geometric grid until the sign
    // changes. The root sits near delta*_N whenever lambda is in the regime
    // where the equilibrium exists.
    let mut grid = Vec::with_capacity(120);
    let mut lo_side = seed.min(hi_domain);
    let mut hi_side = seed.min(hi_domain);
    grid.push(lo_side);
    for _ in 0..60 {
        lo_side /= 1.25;
        grid.push(lo_side);
        if hi_side < hi_domain {
            hi_side = (hi_side * 1.25).min(hi_domain);
            grid.push(hi_side);
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut bracket: Option<(f64, f64, f64, f64)> = None;
    let mut prev: Option<(f64, f64)> = None;
    for &y in &grid {
        let Ok((fy, _)) = f(y) else {
            prev = None;
            continue;
        };
        if let Some((py, pf)) = prev {
            if pf.signum() != fy.signum() {
                bracket = Some((py, y, pf, fy));
                // prefer the bracket containing the seed; otherwise first hit
                if py <= seed && seed <= y {
                    break;
                }
            }
        }
        prev = Some((y, fy));
    }
    let Some((mut lo, mut hi, mut flo, _fhi)) = bracket else {
        return Err(Error::NoConvergence {
            iterations: 0,
            phi_residual: f64::NAN,
        });
    };

    let mut y = seed.clamp(lo, hi);
    let mut last_step = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let (fy, scale) = f(y)?;
        if fy.abs() <= PHI_TOL * scale && last_step.abs() <= 1e-12 * y.abs().max(1e-300) {
            return Ok((y, it));
        }
        // update bracket
        if fy.signum() == flo.signum() {
            lo = y;
            flo = fy;
        } else {
            hi = y;
        }
        // finite-difference Newton step, bisection fallback
        let h = (1e-7 * y.abs()).max(1e-10);
        let dfy = match (f(y + h), f(y - h)) {
            (Ok((fp, _)), Ok((fm, _))) => (fp - fm) / (2.0 * h),
            _ => 0.0,
        };
        let newton = if dfy != 0.0 { y - fy / dfy } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last_step = next - y;
        y = next;
        if last_step == 0.0 {
            // bracket degenerated to a point
            let (fy, scale) = f(y)?;
            if fy.abs() <= PHI_TOL * scale {
                return Ok((y, it));
            }
            return Err(Error::NoConvergence {
                iterations: it,
                phi_residual: fy.abs() / scale,
            });
        }
    }
    let (fy, scale) = f(y)?;
    if fy.abs() <= PHI_TOL * scale {
        return Ok((y, MAX_ITERATIONS));
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        phi_residual: fy.abs() / scale,
    })
}

/// Recovers the full coefficient set from the solved root delta.
/// Every denominator is checked and the sign constraints
/// a_bar > 0, c_bar - (N-1) b_bar > 0 are enforced.
pub fn recover_coefficients(params: &ValidatedParams, delta: f64) -> Result<CoefficientSet> {
    let n = params.n();
    let lambda = params.lambda();
    let gamma = params.gamma();
    let rho = params.rho();
    let beta = params.beta();
    let sigma = params.sigma();
    let np1_sq = (n + 1.0) * (n + 1.0);

    let d = (gamma * lambda).sqrt() * delta;

    let rad = -4.0 * d * d * (3.0 * n + 1.0) / (lambda * lambda * (n - 1.0) * np1_sq)
        + rho * rho
        + (8.0 * gamma * n * n - 4.0 * d * rho * (3.0 * n + 1.0)) / (lambda * np1_sq);
    if rad < 0.0 {
        return Err(Error::Domain("a(d) radicand negative".into()));
    }
    let a = (d * (6.0 * n + 2.0) - lambda * np1_sq * (rho - rad.sqrt())) / (4.0 * n * n);

    let b_den =
        (n + 1.0) * (4.0 * a * (n - 1.0) + 2.0 * d * (n - 3.0) + rho * lambda * (n * n - 1.0));
    if b_den == 0.0 {
        return Err(Error::DenominatorVanished("b(d) denominator".into()));
    }
    let b = 2.0 * (n - 1.0) * {
        let t = -a * n + a + 2.0 * d;
        t * t
    } / b_den;

    let b_bar = (-a * n + a + 2.0 * d) / (lambda - lambda * n * n);
    let c_bar = -(d - a * n) / (lambda + lambda * n);

    let h1 = 2.0 * d - (n - 1.0) * a;
    let h2 = 2.0 * a * (n - 1.0) + d * (n - 3.0) + lambda * (n * n - 1.0) * (beta + rho);
    let h3 = -(2.0 * a * (n - 1.0) + (n - 3.0) * d) / (lambda * (n - 1.0) * (n + 1.0));

    let h4_den1 = h2 * lambda * np1_sq * (2.0 * h2 - lambda * (n * n - 1.0) * (2.0 * beta + rho));
    if h4_den1 == 0.0 {
        return Err(Error::DenominatorVanished(
            "h4 first-term denominator (h2 factor)".into(),
        ));
    }
    let h4 =
        2.0 * h1 * h1 * (-a * (n * n + 2.0 * n - 3.0) + 4.0 * d - lambda * (n * n - 1.0) * rho)
            / h4_den1
            + ((n - 1.0) * d + 2.0 * a * n) / (lambda * np1_sq)
            + beta
            + rho;
    if h4 == 0.0 {
        return Err(Error::DenominatorVanished("h4".into()));
    }
    if params.n_agents() == 2 && (a.is_nan() || d.is_nan() || a < d / 2.0) {
        // N = 2 admissibility of the h4 denominator needs a >= d/2
        return Err(Error::BranchInvalid(format!(
            "N = 2 requires a >= d/2 (a = {a}, d = {d})"
        )));
    }
    if h3 - beta - rho == 0.0 {
        return Err(Error::DenominatorVanished("h3 - beta - rho".into()));
    }

    let e = 1.0 / h4;
    let a_bar = e / ((n + 1.0) * lambda);

    let f_den2 =
        (n + 1.0) * (4.0 * a * (n - 1.0) + 2.0 * d * (n - 3.0) + lambda * (n * n - 1.0) * rho);
    if f_den2 == 0.0 {
        return Err(Error::DenominatorVanished("f inner denominator".into()));
    }
    let f = (d + h3 * lambda * (n - 1.0) - 2.0 * h1 * h1 * (n - 1.0) / f_den2)
        / (lambda * (n + 1.0) * h4 * (h3 - (rho + beta)));

    // c exactly as displayed (nested 1/h4 occurrences kept)
    let c = 2.0
        * (-((((1.0 / h4 - (n - 1.0) / (h4 * (n + 1.0))) * (d + h3 * lambda * (n - 1.0)))
            / (2.0 * lambda)
            - 2.0 * h1 * h1 * (n - 1.0)
                / (h4
                    * lambda
                    * np1_sq
                    * (4.0 * a * (n - 1.0)
                        + 2.0 * d * (n - 3.0)
                        + lambda * (n * n - 1.0) * rho)))
            / (h4 * lambda * (n + 1.0) * (-beta + h3 - rho)))
            - {
                let t = 1.0 / h4 - (n - 1.0) / (h4 * (n + 1.0));
                t * t
            } / (4.0 * lambda))
        / (-2.0 * beta - rho);

    let g = sigma * sigma / (2.0 * rho) * c;

    if a_bar.is_nan() || a_bar <= 0.0 {
        return Err(Error::SignConstraint(format!(
            "a_bar must be positive, got {a_bar}"
        )));
    }
    let m_rate = c_bar - (n - 1.0) * b_bar;
    if m_rate.is_nan() || m_rate <= 0.0 {
        return Err(Error::SignConstraint(format!(
            "m_rate = c_bar - (N-1) b_bar must be positive, got {m_rate}"
        )));
    }

    Ok(CoefficientSet {
        a,
        b,
        c,
        d,
        e,
        f,
        g,
        a_bar,
        b_bar,
        c_bar,
        h1,
        h2,
        h3,
        h4,
        delta,
    })
}

/// Relative discrepancy between the displayed nested c-formula and the
/// rearranged c-equation; should be at rounding level for a converged solve.
pub fn c_cross_check(params: &ValidatedParams, coeffs: &CoefficientSet) -> f64 {
    let n = params.n();
    let lambda = params.lambda();
    let rho = params.rho();
    let beta = params.beta();
    let alt = (coeffs.f * coeffs.a_bar + {
        let t = coeffs.e - lambda * (n - 1.0) * coeffs.a_bar;
        t * t
    } / (4.0 * lambda))
        / ((rho + 2.0 * beta) / 2.0);
    (alt - coeffs.c).abs() / coeffs.c.abs().max(1e-300)
}

fn relative_residual(terms: &[f64]) -> f64 {
    let sum: f64 = terms.iter().sum();
    let scale = terms.iter().fold(0.0, |m: f64, t| m.max(t.abs()));
    sum.abs() / scale.max(1e-300)
}

/// Evaluates all ten equations (left minus right, relative to the largest
/// term) plus the alternate scalar d-equation as an independent cross-check.
pub fn system_residuals(params: &ValidatedParams, coeffs: &CoefficientSet) -> SystemResiduals {
    let n = params.n();
    let lambda = params.lambda();
    let gamma = params.gamma();
    let rho = params.rho();
    let beta = params.beta();
    let sigma = params.sigma();
    let CoefficientSet {
        a,
        b,
        c,
        d,
        e,
        f,
        g,
        a_bar,
        b_bar,
        c_bar,
        ..
    } = *coeffs;

    // recurring couplings
    let own = a + lambda * (n - 1.0) * b_bar;
    let cross = d + lambda * (n - 1.0) * ((n - 2.0) * b_bar - c_bar);
    let sig = e - lambda * (n - 1.0) * a_bar;
    let drift = (n - 2.0) * b_bar - c_bar;

    let equations = [
        relative_residual(&[
            rho * a / 2.0,
            -gamma / 2.0,
            -d * b_bar,
            own * own / (4.0 * lambda),
        ]),
        relative_residual(&[-rho * b / 2.0, b * drift, cross * cross / (4.0 * lambda)]),
        relative_residual(&[rho * d, b * b_bar, -d * drift, own * cross / (2.0 * lambda)]),
        relative_residual(&[-g, sigma * sigma / (2.0 * rho) * c]),
        relative_residual(&[
            -(rho + 2.0 * beta) / 2.0 * c,
            f * a_bar,
            sig * sig / (4.0 * lambda),
        ]),
        relative_residual(&[
            -(rho + beta) * e,
            1.0,
            -d * a_bar,
            b_bar * f,
            -sig * own / (2.0 * lambda),
        ]),
        relative_residual(&[
            b * a_bar,
            f * drift,
            -(rho + beta) * f,
            -sig * cross / (2.0 * lambda),
        ]),
        relative_residual(&[a_bar, -sig / (2.0 * lambda)]),
        relative_residual(&[(n - 1.0) * b_bar, cross / (2.0 * lambda)]),
        relative_residual(&[c_bar, -own / (2.0 * lambda)]),
    ];

    // alternate d-equation with k1 as displayed
    let k1_rad = (-4.0 * d * d * (3.0 * n + 1.0)
        + 4.0 * d * lambda * (-3.0 * n * n + 2.0 * n + 1.0) * rho
        + lambda
            * (n - 1.0)
            * (lambda * rho * rho
                + n * n * (8.0 * gamma + lambda * rho * rho)
                + 2.0 * lambda * n * rho * rho))
        / ((n - 1.0) * (n + 1.0) * (n + 1.0));
    let alt_d = if k1_rad >= 0.0 {
        let k1 = k1_rad.sqrt();
        let kr = k1 - lambda * rho;
        let t1 = -((n + 1.0) * kr + 2.0 * d) * (n + 1.0) * ((n - 1.0) * kr - 2.0 * d)
            / (8.0 * lambda * n.powi(3));
        let t2 = d * ((n * n - 1.0) * kr + 2.0 * d * (n * n - n - 1.0))
            / (2.0 * lambda * (n - 1.0) * n * n);
        let t3 = d * rho;
        let t4 = (n + 1.0).powi(3) * {
            let t = (n - 1.0) * kr - 2.0 * d;
            t * t * t
        } / (32.0
            * lambda
            * n.powi(4)
            * ((n - 1.0) * ((n + 1.0) * k1 + lambda * (n * n - n - 1.0) * rho)
                + 2.0 * d * (n * n - n - 1.0)));
        relative_residual(&[t1, t2, t3, t4])
    } else {
        f64::INFINITY
    };

    SystemResiduals { equations, alt_d }
}

/// End-to-end closed-loop solve: root of the scalar equation, coefficient
/// recovery, sign and residual checks, policy extraction.
pub fn closed_loop_policy(
    params: &ValidatedParams,
) -> Result<(Policy, CoefficientSet, SolveReport)> {
    let (delta, iterations) = solve_delta(params)?;
    let coeffs = recover_coefficients(params, delta)?;
    let residuals = system_residuals(params, &coeffs);
    let (phi_value, phi_scale) = phi_with_scale(params, delta)?;
    let phi_residual = phi_value.abs() / phi_scale.max(1e-300);
    let max_res = residuals.max_equation().max(residuals.alt_d);
    if max_res > RESIDUAL_TOL {
        return Err(Error::BranchInvalid(format!(
            "system residuals {max_res:.3e} exceed tolerance {RESIDUAL_TOL:.0e}; \
             lambda too large for the solved regime"
        )));
    }
    let report = SolveReport {
        delta,
        residuals: residuals.equations,
        alt_d_residual: residuals.alt_d,
        phi_residual,
        iterations,
        converged: true,
        c_cross_check: c_cross_check(params, &coeffs),
    };
    let m_rate = coeffs.m_rate(params.n_agents());
    let m_aim = params.gamma() * coeffs.a_bar / m_rate;
    Ok((
        Policy {
            m_rate,
            m_aim,
            kind: EquilibriumKind::ClosedLoop,
        },
        coeffs,
        report,
    ))
}
