//! Closed-form value of any symmetric linear policy, the building-block
//! integrals I1-I3, and numeric checking of the HJB equation satisfied by the
//! quadratic value function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::equilibrium::{CoefficientSet, Policy};
use crate::model::ValidatedParams;

/// A point in the value function's state space.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct State {
    /// Agent 1's inventory (shares).
    pub x: f64,
    /// Representative other-agent inventory (shares).
    pub y: f64,
    /// Signal level (expected return per day).
    pub m: f64,
}

/// The three discounted-moment integrals behind the value formula, with the
/// M_rate M_aim / gamma prefactors as displayed:
/// I1 = E int e^{-rho t} mu_t phi_t dt, I2 for phi_t^2, I3 for mu_t^2.
pub fn value_integrals(params: &ValidatedParams, policy: &Policy) -> (f64, f64, f64) {
    let sigma = params.sigma();
    let rho = params.rho();
    let beta = params.beta();
    let ratio = policy.m_rate * policy.m_aim / params.gamma();
    let i1 = ratio * sigma * sigma / (rho * (2.0 * beta + rho) * (beta + rho + policy.m_rate));
    let i2 = ratio * ratio * 2.0 * sigma * sigma
        / (rho * (2.0 * beta + rho) * (rho + 2.0 * policy.m_rate) * (beta + rho + policy.m_rate));
    let i3 = sigma * sigma / (2.0 * beta * rho + rho * rho);
    (i1, i2, i3)
}

/// Per-agent expected discounted objective when all N agents run the same
/// linear policy, starting from zero inventories and a zero signal.
///
/// The assembly only uses symmetry and linearity of the policy, so it applies
/// to any (m_rate, m_aim), not just equilibrium fixed points (the source
/// derivation states it for the equilibrium policy).
pub fn closed_form_value(params: &ValidatedParams, policy: &Policy) -> f64 {
    let n = params.n();
    let lambda = params.lambda();
    let gamma = params.gamma();
    let ratio = policy.m_rate * policy.m_aim / gamma;
    let (i1, i2, i3) = value_integrals(params, policy);
    let w1 = (1.0 + 2.0 * lambda * n * policy.m_rate * policy.m_rate * policy.m_aim / gamma) * i1;
    let w2 = lambda * n * ratio * ratio * i3;
    let w3 = (gamma / 2.0 + lambda * n * policy.m_rate * policy.m_rate) * i2;
    w1 - w2 - w3
}

/// Quadratic candidate value function V(x, y, m) and its partials.
fn value_fn(c: &CoefficientSet, s: &State) -> (f64, f64, f64, f64) {
    let State { x, y, m } = *s;
    let v = -c.a / 2.0 * x * x + c.b / 2.0 * y * y + c.c / 2.0 * m * m - c.d * x * y
        + c.e * x * m
        + c.f * y * m
        + c.g;
    let vx = -c.a * x - c.d * y + c.e * m;
    let vy = c.b * y - c.d * x + c.f * m;
    let vm = c.c * m + c.e * x + c.f * y;
    (v, vx, vy, vm)
}

/// HJB check at one state. Returns:
/// - `residual_at_optimum`: rho V minus generator and running reward with the
///   trading rate at its pointwise maximizer (vanishes when the coefficient
///   system holds);
/// - `foc_gap`: the maximized bracket minus its value under a +-10% control
///   perturbation (non-negative by concavity).
pub fn hjb_residual(
    params: &ValidatedParams,
    coeffs: &CoefficientSet,
    state: &State,
) -> (f64, f64) {
    let n = params.n();
    let lambda = params.lambda();
    let gamma = params.gamma();
    let rho = params.rho();
    let beta = params.beta();
    let sigma = params.sigma();
    let State { x, y, m } = *state;
    let (v, vx, vy, vm) = value_fn(coeffs, state);
    let (a_bar, b_bar, c_bar) = (coeffs.a_bar, coeffs.b_bar, coeffs.c_bar);

    // others' drift on the representative inventory
    let y_drift = a_bar * m + b_bar * ((n - 2.0) * y + x) - c_bar * y;
    // impact load agent 1 faces from the others' feedback
    let crowd = (n - 1.0) * (a_bar * m + b_bar * x + ((n - 2.0) * b_bar - c_bar) * y);
    let bracket = |rate: f64| -lambda * rate * (rate + crowd) + rate * vx;

    // pointwise maximizer of the bracket
    let opt = ((coeffs.e - lambda * (n - 1.0) * a_bar) * m
        - (coeffs.a + lambda * (n - 1.0) * b_bar) * x
        - (coeffs.d + lambda * (n - 1.0) * ((n - 2.0) * b_bar - c_bar)) * y)
        / (2.0 * lambda);

    let generator = m * x - gamma / 2.0 * x * x - beta * m * vm
        + 0.5 * sigma * sigma * coeffs.c
        + y_drift * vy
        + bracket(opt);
    let residual = rho * v - generator;

    let foc_gap = (bracket(opt) - bracket(0.9 * opt)).min(bracket(opt) - bracket(1.1 * opt));
    (residual, foc_gap)
}

/// Draws states from a cube scaled by the stationary standard deviations:
/// sigma/sqrt(2 beta) for the signal, a_bar * signal-scale / m_rate for the
/// inventories. Deterministic in the seed.
pub fn sample_states(
    params: &ValidatedParams,
    coeffs: &CoefficientSet,
    count: usize,
    seed: u64,
) -> Vec<State> {
    let m_scale = params.sigma() / (2.0 * params.beta()).sqrt();
    let inv_scale = coeffs.a_bar * m_scale / coeffs.m_rate(params.n_agents());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| State {
            x: rng.gen_range(-inv_scale..inv_scale),
            y: rng.gen_range(-inv_scale..inv_scale),
            m: rng.gen_range(-m_scale..m_scale),
        })
        .collect()
}
