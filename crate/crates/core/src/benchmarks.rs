//! Central-planner and open-loop benchmarks in closed form, plus the small-
//! impact asymptotic expansions shared by all three equilibria.
//!
//! The central planner maximizes the agents' average objective; by symmetry
//! this is a single-agent problem with impact parameter 2N lambda. The
//! open-loop equilibrium replaces 2N by N+1. Both admit explicit policies and
//! values; the closed-loop counterpart needs the scalar solve but shares the
//! same leading asymptotics with multiplier Delta(N).

use serde::Serialize;

use crate::equilibrium::{delta_star, Policy};
use crate::error::{Error, Result};
use crate::model::{EquilibriumKind, ValidatedParams};

/// Leading-order policy asymptotics for small impact:
/// M_rate = rate_leading * sqrt(gamma/lambda) + O(1), M_aim = 1 + o(1).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AsymptoticPolicy {
    pub rate_leading: f64,
    pub aim_leading: f64,
    pub kind: EquilibriumKind,
}

/// Value expansion J = zeroth + half_order * sqrt(lambda) + O(lambda).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ValueBreakdown {
    /// Frictionless value sigma^2 / (2 rho gamma (2 beta + rho)).
    pub zeroth: f64,
    /// Coefficient of sqrt(lambda); negative (costs reduce value).
    pub half_order: f64,
    pub kind: EquilibriumKind,
}

/// The common lambda -> 0 limit of all three equilibrium values.
pub fn frictionless_value(params: &ValidatedParams) -> f64 {
    let sigma = params.sigma();
    sigma * sigma / (2.0 * params.rho() * params.gamma() * (2.0 * params.beta() + params.rho()))
}

fn rate_aim_from_inner(inner: f64, rho: f64, beta: f64) -> (f64, f64) {
    let s = (inner + rho * rho / 4.0).sqrt();
    (s - rho / 2.0, (s + rho / 2.0) / (s + rho / 2.0 + beta))
}

/// Optimal symmetric policy chosen by the central planner (exact closed form).
pub fn central_planner_policy(params: &ValidatedParams) -> Policy {
    let (m_rate, m_aim) = rate_aim_from_inner(
        params.gamma() / (2.0 * params.n() * params.lambda()),
        params.rho(),
        params.beta(),
    );
    Policy {
        m_rate,
        m_aim,
        kind: EquilibriumKind::CentralPlanner,
    }
}

/// The planner's optimal per-agent performance (exact closed form).
pub fn central_planner_value(params: &ValidatedParams) -> f64 {
    let n = params.n();
    let lambda = params.lambda();
    let rho = params.rho();
    let beta = params.beta();
    let sigma = params.sigma();
    let s = (params.gamma() / (2.0 * n * lambda) + rho * rho / 4.0).sqrt();
    let root = rho / 2.0 + beta + s;
    sigma * sigma / (2.0 * rho) / (2.0 * n * lambda * (rho + 2.0 * beta)) / (root * root)
}

/// Each agent's policy in the unique open-loop Nash equilibrium.
/// The aim denominator reads sqrt(gamma/((N+1)lambda) + rho^2/4) + rho/2 + beta.
pub fn open_loop_policy(params: &ValidatedParams) -> Policy {
    let (m_rate, m_aim) = rate_aim_from_inner(
        params.gamma() / ((params.n() + 1.0) * params.lambda()),
        params.rho(),
        params.beta(),
    );
    Policy {
        m_rate,
        m_aim,
        kind: EquilibriumKind::OpenLoop,
    }
}

/// The agents' common optimal value in the open-loop equilibrium.
pub fn open_loop_value(params: &ValidatedParams) -> f64 {
    let n = params.n();
    let lambda = params.lambda();
    let rho = params.rho();
    let beta = params.beta();
    let sigma = params.sigma();
    let gamma = params.gamma();
    let Policy { m_rate, m_aim, .. } = open_loop_policy(params);
    let ratio = m_rate * m_aim / gamma;
    let w1 = (1.0 + 2.0 * lambda * n * m_rate * m_rate * m_aim / gamma) * ratio * sigma * sigma
        / (rho * (2.0 * beta + rho) * (beta + rho + m_rate));
    let w2 = ratio * ratio * sigma * sigma / (rho * (2.0 * beta + rho))
        * (lambda * n
            + (gamma + 2.0 * lambda * n * m_rate * m_rate)
                / ((rho + 2.0 * m_rate) * (beta + rho + m_rate)));
    w1 - w2
}

/// Shared square root D-bar(y) = sqrt((2N^3 - 2N^2 - (3N+1) y^2)/((N-1)(N+1)^2)).
pub fn d_bar(n_agents: u32, y: f64) -> Result<f64> {
    let n = f64::from(n_agents);
    let rad = (2.0 * n.powi(3) - 2.0 * n * n - (3.0 * n + 1.0) * y * y)
        / ((n - 1.0) * (n + 1.0) * (n + 1.0));
    if rad < 0.0 {
        return Err(Error::Domain(format!("D-bar radicand negative at y = {y}")));
    }
    Ok(rad.sqrt())
}

/// Delta(N): the N-dependent multiplier of sqrt(gamma/lambda) in the
/// closed-loop relative trading speed,
/// Delta(N) = ((N+1) D-bar(delta*) + (2N+1) delta*) / (2 N^2).
pub fn delta_of_n(n_agents: u32) -> Result<f64> {
    let ds = delta_star(n_agents)?;
    let n = f64::from(n_agents);
    let db = d_bar(n_agents, ds)?;
    Ok(((n + 1.0) * db + (2.0 * n + 1.0) * ds) / (2.0 * n * n))
}

/// Leading-order rate multipliers at the solved lambda:
/// closed loop Delta(N), open loop 1/sqrt(N+1), central planner 1/sqrt(2N).
pub fn asymptotic_policy(n_agents: u32, kind: EquilibriumKind) -> Result<AsymptoticPolicy> {
    let n = f64::from(n_agents);
    let rate_leading = match kind {
        EquilibriumKind::ClosedLoop => delta_of_n(n_agents)?,
        EquilibriumKind::OpenLoop => (n + 1.0).sqrt().recip(),
        EquilibriumKind::CentralPlanner => (2.0 * n).sqrt().recip(),
    };
    Ok(AsymptoticPolicy {
        rate_leading,
        aim_leading: 1.0,
        kind,
    })
}

/// Closed-loop value expansion: zeroth the frictionless value, half-order
/// -sigma^2 (1 + 2 Delta(N)^2 N) / (4 gamma^{3/2} rho Delta(N)).
pub fn closed_loop_value_asymptotic(params: &ValidatedParams) -> Result<ValueBreakdown> {
    let delta = delta_of_n(params.n_agents())?;
    let sigma = params.sigma();
    let gamma = params.gamma();
    let rho = params.rho();
    let half_order = -sigma * sigma * (1.0 + 2.0 * delta * delta * params.n())
        / (4.0 * gamma.powf(1.5) * rho * delta);
    Ok(ValueBreakdown {
        zeroth: frictionless_value(params),
        half_order,
        kind: EquilibriumKind::ClosedLoop,
    })
}

/// chi_N(y): the combination whose vanishing at delta*_N encodes the identity
/// h4^0 = 1 / ((N+1) Delta(N)).
pub fn chi(n_agents: u32, y: f64) -> Result<f64> {
    let n = f64::from(n_agents);
    let db = d_bar(n_agents, y)?;
    let t1 = (db + y) / n;
    let t2 = (n + 1.0)
        * ((n.powi(3) + 3.0 * n * n - n - 3.0) * db + (3.0 * n * n - 4.0 * n - 3.0) * y)
        * {
            let r = y - (n - 1.0) * db;
            r * r
        }
        / (8.0 * n * n * {
            let q = (n * n - 1.0) * db + (n * n - n - 1.0) * y;
            q * q
        });
    let t3 = 2.0 * n * n / ((n + 1.0) * ((n + 1.0) * db + (2.0 * n + 1.0) * y));
    Ok(t1 - t2 - t3)
}

/// h4^0: the sqrt(gamma/lambda) coefficient in the expansion of h4,
/// expressed through delta*_N and D-bar(delta*_N).
pub fn h4_limit(n_agents: u32) -> Result<f64> {
    let ds = delta_star(n_agents)?;
    let n = f64::from(n_agents);
    let db = d_bar(n_agents, ds)?;
    let t1 = (db + ds) / n;
    let t2 = (n + 1.0)
        * ((n.powi(3) + 3.0 * n * n - n - 3.0) * db + (3.0 * n * n - 4.0 * n - 3.0) * ds)
        * {
            let r = ds - (n - 1.0) * db;
            r * r
        }
        / (8.0 * n * n * {
            let q = (n * n - 1.0) * db + (n * n - n - 1.0) * ds;
            q * q
        });
    Ok(t1 - t2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::closed_loop_policy;
    use crate::model::{apply_scaling, validate, ModelParams, ScalingMode};
    use approx::assert_relative_eq;

    fn calibrated(n_agents: u32) -> ValidatedParams {
        let sigma_p = 0.0088;
        validate(ModelParams {
            beta: 0.070,
            sigma: 0.00015,
            sigma_p,
            rho: 0.00004,
            gamma: 2.5e-8 * sigma_p * sigma_p,
            lambda: 1.88e-10,
            n_agents,
        })
        .unwrap()
    }

    fn with(params: &ValidatedParams, f: impl FnOnce(&mut ModelParams)) -> ValidatedParams {
        let mut p = *params.params();
        f(&mut p);
        validate(p).unwrap()
    }

    #[test]
    fn cp_rate_at_zero_discount() {
        let params = with(&calibrated(4), |p| p.rho = 1e-300);
        let policy = central_planner_policy(&params);
        let expected = (params.gamma() / (2.0 * 4.0 * params.lambda())).sqrt();
        assert_relative_eq!(policy.m_rate, expected, max_relative = 1e-12);
    }

    #[test]
    fn ol_rate_at_zero_discount() {
        let params = with(&calibrated(4), |p| p.rho = 1e-300);
        let policy = open_loop_policy(&params);
        let expected = (params.gamma() / (5.0 * params.lambda())).sqrt();
        assert_relative_eq!(policy.m_rate, expected, max_relative = 1e-12);
    }

    #[test]
    fn aims_in_unit_interval() {
        for n in [2u32, 10, 100] {
            let params = calibrated(n);
            let cp = central_planner_policy(&params);
            let ol = open_loop_policy(&params);
            assert!(cp.m_aim > 0.0 && cp.m_aim < 1.0);
            assert!(ol.m_aim > 0.0 && ol.m_aim < 1.0);
        }
    }

    #[test]
    fn cp_value_tends_to_frictionless() {
        let base = calibrated(3);
        let fr = frictionless_value(&base);
        let mut prev_gap = f64::INFINITY;
        for k in 1..=6 {
            let params = with(&base, |p| p.lambda = p.gamma * 10f64.powi(-k));
            let gap = (central_planner_value(&params) - fr).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap / fr < 1e-3);
    }

    #[test]
    fn cp_value_sqrt_slope() {
        // sqrt(lambda)-slope of J(lambda) - J(0) is -sigma^2 sqrt(2N)/(2 rho gamma^{3/2})
        let base = calibrated(6);
        let fr = frictionless_value(&base);
        let n = base.n();
        let expected = -base.sigma() * base.sigma() * (2.0 * n).sqrt()
            / (2.0 * base.rho() * base.gamma().powf(1.5));
        for k in 4..=6 {
            let params = with(&base, |p| p.lambda = p.gamma * 10f64.powi(-k));
            let slope = (central_planner_value(&params) - fr) / params.lambda().sqrt();
            assert_relative_eq!(slope, expected, max_relative = 0.01);
        }
    }

    #[test]
    fn cp_value_scales_with_sigma_squared() {
        let params = calibrated(5);
        let doubled = with(&params, |p| p.sigma *= 2.0);
        assert_relative_eq!(
            central_planner_value(&doubled),
            4.0 * central_planner_value(&params),
            max_relative = 1e-12
        );
    }

    #[test]
    fn ol_value_sqrt_slope() {
        let base = calibrated(4);
        let fr = frictionless_value(&base);
        let n = base.n();
        let expected = -base.sigma() * base.sigma() * (1.0 + 3.0 * n)
            / (4.0 * base.rho() * base.gamma().powf(1.5) * (1.0 + n).sqrt());
        for k in 4..=6 {
            let params = with(&base, |p| p.lambda = p.gamma * 10f64.powi(-k));
            let slope = (open_loop_value(&params) - fr) / params.lambda().sqrt();
            assert_relative_eq!(slope, expected, max_relative = 0.01);
        }
    }

    #[test]
    fn mean_field_cp_reduces_to_two_lambda() {
        // CP solved at lambda/N coincides with the closed form where the
        // 2 N lambda factor collapses to 2 lambda
        let params = calibrated(6);
        let scaled = apply_scaling(&params, ScalingMode::MeanField).unwrap();
        let cp = central_planner_policy(&scaled);
        let s =
            (params.gamma() / (2.0 * params.lambda()) + params.rho() * params.rho() / 4.0).sqrt();
        assert_relative_eq!(cp.m_rate, s - params.rho() / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn cp_equals_ol_formula_continuation_at_n1() {
        // the two displayed formulas coincide when 2N = N+1, i.e. N = 1;
        // validated params need N >= 2, so compare the raw closed forms.
        let params = calibrated(2);
        let inner_cp = params.gamma() / (2.0 * 1.0 * params.lambda());
        let inner_ol = params.gamma() / ((1.0 + 1.0) * params.lambda());
        assert_eq!(inner_cp, inner_ol);
    }

    #[test]
    fn asymptotic_policy_multipliers() {
        let cl = asymptotic_policy(4, EquilibriumKind::ClosedLoop).unwrap();
        assert_eq!(cl.rate_leading, delta_of_n(4).unwrap());
        assert_eq!(cl.aim_leading, 1.0);
        let ol = asymptotic_policy(4, EquilibriumKind::OpenLoop).unwrap();
        assert_relative_eq!(ol.rate_leading, 1.0 / 5f64.sqrt(), max_relative = 1e-15);
        let cp = asymptotic_policy(4, EquilibriumKind::CentralPlanner).unwrap();
        assert_relative_eq!(cp.rate_leading, 1.0 / 8f64.sqrt(), max_relative = 1e-15);
        // exact rates approach these multipliers as impact vanishes
        let params = with(&calibrated(4), |p| p.lambda = p.gamma * 1e-10);
        let scale = (params.lambda() / params.gamma()).sqrt();
        assert_relative_eq!(
            scale * open_loop_policy(&params).m_rate,
            ol.rate_leading,
            max_relative = 1e-4
        );
    }

    #[test]
    fn delta_of_n_positive_and_sandwiched() {
        for n in 2..=100u32 {
            let d = delta_of_n(n).unwrap();
            assert!(d > 0.0, "N = {n}");
            let nf = f64::from(n);
            let mult = d * nf.sqrt();
            assert!(
                (0.5f64.sqrt()..=(nf / (nf + 1.0)).sqrt()).contains(&mult),
                "N = {n}: Delta sqrt(N) = {mult}"
            );
        }
    }

    #[test]
    fn h4_limit_identity() {
        for n in 2..=50u32 {
            let lhs = h4_limit(n).unwrap() * (f64::from(n) + 1.0) * delta_of_n(n).unwrap();
            assert_relative_eq!(lhs, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn chi_vanishes_at_delta_star() {
        for n in 2..=50u32 {
            let ds = delta_star(n).unwrap();
            assert!(chi(n, ds).unwrap().abs() <= 1e-8, "N = {n}");
        }
    }

    #[test]
    fn h4_limit_matches_solved_h4_scaling() {
        // sqrt(lambda/gamma) h4(lambda) -> h4^0 along lambda -> 0
        let base = calibrated(3);
        let target = h4_limit(3).unwrap();
        let mut prev_gap = f64::INFINITY;
        for k in [4, 6, 8] {
            let params = with(&base, |p| p.lambda = p.gamma * 10f64.powi(-k));
            let (_, coeffs, _) = closed_loop_policy(&params).unwrap();
            let scaled = (params.lambda() / params.gamma()).sqrt() * coeffs.h4;
            let gap = (scaled - target).abs();
            assert!(gap < prev_gap, "k = {k}");
            prev_gap = gap;
        }
        assert!(prev_gap / target < 5e-4);
    }

    #[test]
    fn closed_loop_value_breakdown_signs() {
        for n in [2u32, 10, 100] {
            let params = calibrated(n);
            let vb = closed_loop_value_asymptotic(&params).unwrap();
            assert!(vb.zeroth > 0.0);
            assert!(vb.half_order < 0.0, "N = {n}");
        }
    }

    #[test]
    fn closed_loop_value_remainder_is_first_order() {
        // |exact - (zeroth + half_order sqrt(lambda))| = O(lambda):
        // the remainder ratio across a decade should be ~10, not ~sqrt(10).
        use crate::valuation::closed_form_value;
        let base = calibrated(3);
        let vb = closed_loop_value_asymptotic(&base).unwrap();
        let mut remainders = Vec::new();
        for k in [2, 3, 4] {
            let params = with(&base, |p| p.lambda = p.gamma * 10f64.powi(-k));
            let (policy, _, _) = closed_loop_policy(&params).unwrap();
            let exact = closed_form_value(&params, &policy);
            let asym = vb.zeroth + vb.half_order * params.lambda().sqrt();
            remainders.push((exact - asym).abs());
        }
        for w in remainders.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                ratio > 4.0,
                "remainder not O(lambda): ratios {remainders:?}"
            );
        }
    }

    #[test]
    fn mean_field_rate_multiplier_orderings() {
        // under mean-field scaling the three sqrt(lambda_raw/gamma) M_rate
        // multipliers approach 1/sqrt(2) (CP), Delta(N) sqrt(N) (CL),
        // sqrt(N/(N+1)) (OL), in that order
        for n in [2u32, 10, 100] {
            let params = apply_scaling(&calibrated(n), ScalingMode::MeanField).unwrap();
            let nf = f64::from(n);
            let cp = central_planner_policy(&params);
            let ol = open_loop_policy(&params);
            let lam_raw = params.lambda() * nf;
            let scale = (lam_raw / params.gamma()).sqrt();
            assert!(cp.m_rate <= ol.m_rate);
            assert_relative_eq!(scale * cp.m_rate, 0.5f64.sqrt(), max_relative = 1e-3);
            assert_relative_eq!(
                scale * ol.m_rate,
                (nf / (nf + 1.0)).sqrt(),
                max_relative = 1e-3
            );
        }
    }
}
