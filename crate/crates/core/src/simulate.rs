//! Monte Carlo engine: exact Ornstein-Uhlenbeck signal paths, position
//! dynamics under linear feedback, discounted-value estimation, and paired
//! unilateral-deviation experiments.
//!
//! Two integrators live here:
//! - [`simulate_positions`] integrates the coupled position ODEs with plain
//!   Euler steps for any per-agent feedback list, exposing the full
//!   [`PathBundle`]; its error is first order in `dt`.
//! - value estimation ([`estimate_value`], [`deviation_experiment`]) uses the
//!   exact discretization of the joint linear SDE (matrix-exponential
//!   transition plus the exact Gaussian step covariance via the Van Loan
//!   construction). The feedback couplings are stiff relative to practical
//!   reward-sampling steps (the anti-symmetric mode decays at roughly
//!   c_bar + b_bar per day), so Euler stepping at the dt used for value
//!   estimates would bias or destabilize the estimator; the exact transition
//!   sidesteps that while keeping the trapezoidal reward quadrature.
//!
//! Determinism: every path derives its own RNG from (seed, path_index), so
//! results are bit-identical regardless of the rayon thread count, and the
//! reduction over paths is a fixed-order sum.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{closed_loop_policy, CoefficientSet, Policy};
use crate::error::{Error, Result};
use crate::model::ValidatedParams;

/// Monte Carlo configuration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimConfig {
    /// Time step (days).
    pub dt: f64,
    /// Horizon T (days).
    pub horizon: f64,
    /// Number of simulated paths.
    pub n_paths: usize,
    /// Base seed; path k uses an RNG derived from (seed, k).
    pub seed: u64,
    /// Initial signal level.
    pub mu0: f64,
}

impl SimConfig {
    /// Checks the step/horizon invariants, including discount coverage
    /// e^(-rho T) <= 0.01 so the truncated integral carries the value.
    pub fn validate(&self, params: &ValidatedParams) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !self.horizon.is_finite() || self.horizon < self.dt {
            return Err(Error::InvalidInput(format!(
                "horizon must be >= dt, got {}",
                self.horizon
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be positive".into()));
        }
        let coverage = (-params.rho() * self.horizon).exp();
        if coverage > 0.01 {
            return Err(Error::InvalidInput(format!(
                "discount coverage e^(-rho T) = {coverage:.3} exceeds 0.01; extend the horizon"
            )));
        }
        if !self.mu0.is_finite() {
            return Err(Error::InvalidInput("mu0 must be finite".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

fn summarize(values: &[f64]) -> ValueEstimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    ValueEstimate {
        mean,
        std_error,
        n_paths: n,
    }
}

/// One simulated path of the signal and all agents' inventories and rates.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
    /// `inventories[n][i]`: agent n at time index i. All start at zero.
    pub inventories: Vec<Vec<f64>>,
    /// `rates[n][i]`: agent n's trading rate at time index i.
    pub rates: Vec<Vec<f64>>,
}

/// General linear feedback: rate = a_bar mu + b_bar * (others' inventories)
/// - c_bar * own inventory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeedbackPolicy {
    pub a_bar: f64,
    pub b_bar: f64,
    pub c_bar: f64,
}

impl FeedbackPolicy {
    /// Aim-tracking form: rate = m_rate (m_aim mu / gamma - own inventory).
    pub fn from_policy(policy: &Policy, gamma: f64) -> Self {
        FeedbackPolicy {
            a_bar: policy.m_rate * policy.m_aim / gamma,
            b_bar: 0.0,
            c_bar: policy.m_rate,
        }
    }

    pub fn from_coefficients(coeffs: &CoefficientSet) -> Self {
        FeedbackPolicy {
            a_bar: coeffs.a_bar,
            b_bar: coeffs.b_bar,
            c_bar: coeffs.c_bar,
        }
    }
}

/// Multiplicative perturbation of agent 1's feedback coefficients.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Perturbation {
    pub a_bar_factor: f64,
    pub b_bar_factor: f64,
    pub c_bar_factor: f64,
}

impl Perturbation {
    pub fn identity() -> Self {
        Perturbation {
            a_bar_factor: 1.0,
            b_bar_factor: 1.0,
            c_bar_factor: 1.0,
        }
    }

    /// Scale the relative trading speed, keeping the aim: all three
    /// coefficients scale together.
    pub fn m_rate(factor: f64) -> Self {
        Perturbation {
            a_bar_factor: factor,
            b_bar_factor: factor,
            c_bar_factor: factor,
        }
    }

    /// Scale the aim multiplier, keeping the speed: only a_bar scales.
    pub fn m_aim(factor: f64) -> Self {
        Perturbation {
            a_bar_factor: factor,
            b_bar_factor: 1.0,
            c_bar_factor: 1.0,
        }
    }

    pub fn apply(&self, feedback: &FeedbackPolicy) -> FeedbackPolicy {
        FeedbackPolicy {
            a_bar: feedback.a_bar * self.a_bar_factor,
            b_bar: feedback.b_bar * self.b_bar_factor,
            c_bar: feedback.c_bar * self.c_bar_factor,
        }
    }
}

/// Paired (common-random-numbers) deviation result. `difference` summarizes
/// the per-path deviant-minus-equilibrium values, whose standard error is the
/// paired SE for Nash-property checks.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DeviationReport {
    pub equilibrium: ValueEstimate,
    pub deviant: ValueEstimate,
    pub difference: ValueEstimate,
}

fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path_index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Exact-discretization step parameters of the signal.
fn ou_step(params: &ValidatedParams, dt: f64) -> (f64, f64) {
    let beta = params.beta();
    let decay = (-beta * dt).exp();
    let noise = params.sigma() * ((1.0 - (-2.0 * beta * dt).exp()) / (2.0 * beta)).sqrt();
    (decay, noise)
}

/// One exact Ornstein-Uhlenbeck path on the config grid for the given path
/// index (the signal is the path's first consumer of its RNG stream).
pub fn simulate_signal_with_index(
    params: &ValidatedParams,
    config: &SimConfig,
    path_index: u64,
) -> Vec<f64> {
    let n_steps = config.n_steps();
    let (decay, noise) = ou_step(params, config.dt);
    let mut rng = path_rng(config.seed, path_index);
    let mut path = Vec::with_capacity(n_steps + 1);
    let mut mu = config.mu0;
    path.push(mu);
    for _ in 0..n_steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        mu = mu * decay + noise * z;
        path.push(mu);
    }
    path
}

/// Exact OU path for path index 0; deterministic in the seed.
pub fn simulate_signal(params: &ValidatedParams, config: &SimConfig) -> Vec<f64> {
    simulate_signal_with_index(params, config, 0)
}

/// Euler integration of the coupled position ODEs for arbitrary per-agent
/// feedback policies sharing one signal path. First-order accurate in dt;
/// inventories satisfy phi[i+1] = phi[i] + rate[i] * dt exactly.
pub fn simulate_positions(
    policies: &[FeedbackPolicy],
    signal: &[f64],
    config: &SimConfig,
) -> PathBundle {
    let n_agents = policies.len();
    let n_steps = signal.len() - 1;
    let dt = config.dt;
    let mut inventories = vec![vec![0.0; n_steps + 1]; n_agents];
    let mut rates = vec![vec![0.0; n_steps + 1]; n_agents];
    let mut phi = vec![0.0f64; n_agents];
    let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    for i in 0..=n_steps {
        let mu = signal[i];
        let total: f64 = phi.iter().sum();
        for (n, pol) in policies.iter().enumerate() {
            let rate = pol.a_bar * mu + pol.b_bar * (total - phi[n]) - pol.c_bar * phi[n];
            rates[n][i] = rate;
            inventories[n][i] = phi[n];
        }
        if i < n_steps {
            for n in 0..n_agents {
                phi[n] += rates[n][i] * dt;
            }
        }
    }
    PathBundle {
        times,
        signal: signal.to_vec(),
        inventories,
        rates,
    }
}

/// A feedback group: `count` agents sharing one policy.
#[derive(Debug, Clone, Copy)]
struct Group {
    policy: FeedbackPolicy,
    count: f64,
}

/// Exact one-step transition of the joint linear SDE (signal plus one
/// inventory coordinate per feedback group), with trapezoidal discounted
/// reward accumulation for a chosen group.
struct ExactEngine {
    dim: usize,
    transition: Vec<f64>,
    noise_factor: Vec<f64>,
    groups: Vec<Group>,
    weights: Vec<f64>,
    mu0: f64,
    gamma: f64,
    lambda: f64,
    target: usize,
}

fn psd_sqrt_lower(q: &DMatrix<f64>) -> DMatrix<f64> {
    // LDL^T with clamping of tiny negative pivots; Q is PSD up to rounding
    // and may be rank deficient (e.g. zero noise).
    let n = q.nrows();
    let scale = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max);
    let floor = scale * 1e-14;
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut d = vec![0.0f64; n];
    for j in 0..n {
        let mut dj = q[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        d[j] = if dj > floor { dj } else { 0.0 };
        l[(j, j)] = 1.0;
        for i in (j + 1)..n {
            if d[j] == 0.0 {
                l[(i, j)] = 0.0;
                continue;
            }
            let mut v = q[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / d[j];
        }
    }
    for j in 0..n {
        let s = d[j].sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    l
}

impl ExactEngine {
    fn new(
        params: &ValidatedParams,
        groups: Vec<Group>,
        config: &SimConfig,
        target: usize,
    ) -> Self {
        let dim = 1 + groups.len();
        let mut drift = DMatrix::<f64>::zeros(dim, dim);
        drift[(0, 0)] = -params.beta();
        for (i, gi) in groups.iter().enumerate() {
            let row = 1 + i;
            drift[(row, 0)] = gi.policy.a_bar;
            for (j, gj) in groups.iter().enumerate() {
                let peers = if i == j { gi.count - 1.0 } else { gj.count };
                drift[(row, 1 + j)] += gi.policy.b_bar * peers;
            }
            drift[(row, 1 + i)] -= gi.policy.c_bar;
        }
        // Van Loan block matrix for the exact transition and step covariance
        let mut block = DMatrix::<f64>::zeros(2 * dim, 2 * dim);
        for i in 0..dim {
            for j in 0..dim {
                block[(i, j)] = drift[(i, j)] * config.dt;
                block[(dim + i, dim + j)] = -drift[(j, i)] * config.dt;
            }
        }
        block[(0, dim)] = params.sigma() * params.sigma() * config.dt;
        let e = block.exp();
        let a = e.view((0, 0), (dim, dim)).into_owned();
        let y = e.view((0, dim), (dim, dim)).into_owned();
        let mut q = &y * a.transpose();
        for i in 0..dim {
            for j in 0..i {
                let s = 0.5 * (q[(i, j)] + q[(j, i)]);
                q[(i, j)] = s;
                q[(j, i)] = s;
            }
        }
        let l = psd_sqrt_lower(&q);

        let n_steps = config.n_steps();
        let rho = params.rho();
        let mut weights = Vec::with_capacity(n_steps + 1);
        for i in 0..=n_steps {
            let w = if i == 0 || i == n_steps { 0.5 } else { 1.0 };
            weights.push(w * config.dt * (-rho * i as f64 * config.dt).exp());
        }

        ExactEngine {
            dim,
            transition: a.iter().cloned().collect(),
            noise_factor: l.iter().cloned().collect(),
            groups,
            weights,
            mu0: config.mu0,
            gamma: params.gamma(),
            lambda: params.lambda(),
            target,
        }
    }

    #[inline]
    fn reward(&self, state: &[f64]) -> f64 {
        let mu = state[0];
        let mut rates = [0.0f64; 3];
        let mut total = 0.0;
        for (i, gi) in self.groups.iter().enumerate() {
            let mut r = gi.policy.a_bar * mu - gi.policy.c_bar * state[1 + i];
            for (j, gj) in self.groups.iter().enumerate() {
                let peers = if i == j { gi.count - 1.0 } else { gj.count };
                r += gi.policy.b_bar * peers * state[1 + j];
            }
            rates[i] = r;
            total += gi.count * r;
        }
        let phi = state[1 + self.target];
        mu * phi - 0.5 * self.gamma * phi * phi - self.lambda * rates[self.target] * total
    }

    #[allow(clippy::needless_range_loop)]
    fn run_path(&self, seed: u64, path_index: u64) -> f64 {
        let dim = self.dim;
        let mut rng = path_rng(seed, path_index);
        let mut state = [0.0f64; 3];
        let mut next = [0.0f64; 3];
        let mut z = [0.0f64; 3];
        state[0] = self.mu0;
        let mut acc = self.weights[0] * self.reward(&state[..dim]);
        for w in &self.weights[1..] {
            for zi in z.iter_mut().take(dim) {
                *zi = StandardNormal.sample(&mut rng);
            }
            // column-major transition and noise factor
            for (i, slot) in next.iter_mut().enumerate().take(dim) {
                let mut v = 0.0;
                for k in 0..dim {
                    v += self.transition[i + dim * k] * state[k];
                }
                for k in 0..=i {
                    v += self.noise_factor[i + dim * k] * z[k];
                }
                *slot = v;
            }
            state[..dim].copy_from_slice(&next[..dim]);
            acc += w * self.reward(&state[..dim]);
        }
        acc
    }
}

/// Groups a per-agent policy list into at most two feedback groups, keeping
/// the first agent's group first when it is a singleton deviator.
fn group_policies(policies: &[FeedbackPolicy]) -> Result<Vec<Group>> {
    let mut groups: Vec<Group> = Vec::new();
    for p in policies {
        match groups.iter_mut().find(|g| g.policy == *p) {
            Some(g) => g.count += 1.0,
            None => groups.push(Group {
                policy: *p,
                count: 1.0,
            }),
        }
    }
    if groups.len() > 2 {
        return Err(Error::InvalidInput(format!(
            "at most two distinct feedback policies are supported (one deviator), got {}",
            groups.len()
        )));
    }
    Ok(groups)
}

/// Monte Carlo estimate of agent `agent_index`'s expected discounted
/// objective under the given per-agent feedback policies (at most one
/// deviating policy). mu0 = 0 when comparing against closed-form values.
pub fn estimate_value(
    params: &ValidatedParams,
    policies: &[FeedbackPolicy],
    agent_index: usize,
    config: &SimConfig,
) -> Result<ValueEstimate> {
    config.validate(params)?;
    if policies.len() != params.n_agents() as usize {
        return Err(Error::InvalidInput(format!(
            "expected {} policies, got {}",
            params.n_agents(),
            policies.len()
        )));
    }
    if agent_index >= policies.len() {
        return Err(Error::InvalidInput(format!(
            "agent_index {agent_index} out of range"
        )));
    }
    let groups = group_policies(policies)?;
    let target = groups
        .iter()
        .position(|g| g.policy == policies[agent_index])
        .expect("group exists");
    let engine = ExactEngine::new(params, groups, config, target);
    let values: Vec<f64> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| engine.run_path(config.seed, i as u64))
        .collect();
    Ok(summarize(&values))
}

/// Runs the paired deviation experiment: agents 2..N keep the closed-loop
/// equilibrium feedback (reacting to agent 1's actual inventory), while agent
/// 1's coefficients are scaled by the perturbation. Both runs share the
/// per-path random numbers; with the identity perturbation they are
/// bit-identical.
pub fn deviation_experiment(
    params: &ValidatedParams,
    config: &SimConfig,
    perturbation: &Perturbation,
) -> Result<DeviationReport> {
    config.validate(params)?;
    let (_, coeffs, _) = closed_loop_policy(params)?;
    let equilibrium = FeedbackPolicy::from_coefficients(&coeffs);
    let deviant = perturbation.apply(&equilibrium);
    let rest = params.n() - 1.0;
    // both engines use the same (1, N-1) group split so the identity
    // perturbation runs through identical arithmetic
    let eq_engine = ExactEngine::new(
        params,
        vec![
            Group {
                policy: equilibrium,
                count: 1.0,
            },
            Group {
                policy: equilibrium,
                count: rest,
            },
        ],
        config,
        0,
    );
    let dev_engine = ExactEngine::new(
        params,
        vec![
            Group {
                policy: deviant,
                count: 1.0,
            },
            Group {
                policy: equilibrium,
                count: rest,
            },
        ],
        config,
        0,
    );
    let pairs: Vec<(f64, f64)> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            (
                eq_engine.run_path(config.seed, i as u64),
                dev_engine.run_path(config.seed, i as u64),
            )
        })
        .collect();
    let eq_values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let dev_values: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.1 - p.0).collect();
    Ok(DeviationReport {
        equilibrium: summarize(&eq_values),
        deviant: summarize(&dev_values),
        difference: summarize(&diffs),
    })
}
