//! Model parameters, validation, and the mean-field rescaling used by all
//! cross-equilibrium comparisons.
//!
//! Units are "per day" throughout: rates in 1/day, volatilities in 1/day^(1/2).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Market and preference parameters of the N-player trading game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Signal mean-reversion rate (1/day, > 0).
    pub beta: f64,
    /// Signal volatility (1/day^(1/2), > 0).
    pub sigma: f64,
    /// Price volatility (per share per day^(1/2), >= 0). Only used to derive
    /// gamma in the default calibration; the solved system never reads it.
    pub sigma_p: f64,
    /// Time-discount rate (1/day, > 0).
    pub rho: f64,
    /// Inventory-cost coefficient (> 0).
    #[serde(alias = "gamma_")]
    pub gamma: f64,
    /// Temporary-impact coefficient (> 0).
    #[serde(alias = "lambda_")]
    pub lambda: f64,
    /// Number of agents (>= 2).
    pub n_agents: u32,
}

/// Whether to solve at the raw impact parameter or at the mean-field
/// rescaling lambda/N (each agent carries mass 1/N, so total risk-bearing
/// capacity is independent of N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Raw,
    MeanField,
}

/// Which equilibrium notion a policy or value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    ClosedLoop,
    OpenLoop,
    CentralPlanner,
}

impl EquilibriumKind {
    pub fn label(&self) -> &'static str {
        match self {
            EquilibriumKind::ClosedLoop => "closed_loop",
            EquilibriumKind::OpenLoop => "open_loop",
            EquilibriumKind::CentralPlanner => "central_planner",
        }
    }
}

/// Parameters that passed [`validate`]. Mean-field rescaling is tracked so it
/// cannot be applied twice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedParams {
    params: ModelParams,
    #[serde(skip)]
    mean_field_applied: bool,
}

impl ValidatedParams {
    pub fn beta(&self) -> f64 {
        self.params.beta
    }
    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }
    pub fn sigma_p(&self) -> f64 {
        self.params.sigma_p
    }
    pub fn rho(&self) -> f64 {
        self.params.rho
    }
    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }
    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }
    pub fn n_agents(&self) -> u32 {
        self.params.n_agents
    }
    /// N as a float, for formula use.
    pub fn n(&self) -> f64 {
        f64::from(self.params.n_agents)
    }
    pub fn params(&self) -> &ModelParams {
        &self.params
    }
    pub fn mean_field_applied(&self) -> bool {
        self.mean_field_applied
    }
}

/// Checks every field invariant; returns the parameters unchanged on success.
/// The error names the first violated field.
pub fn validate(params: ModelParams) -> Result<ValidatedParams> {
    fn positive(name: &str, v: f64) -> Result<()> {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
        Ok(())
    }
    positive("beta", params.beta)?;
    positive("sigma", params.sigma)?;
    if !params.sigma_p.is_finite() || params.sigma_p < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma_p must be non-negative, got {}",
            params.sigma_p
        )));
    }
    positive("rho", params.rho)?;
    positive("gamma", params.gamma)?;
    positive("lambda", params.lambda)?;
    if params.n_agents < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_agents must be >= 2, got {}",
            params.n_agents
        )));
    }
    Ok(ValidatedParams {
        params,
        mean_field_applied: false,
    })
}

/// Applies the chosen scaling. `Raw` is the identity; `MeanField` replaces
/// lambda by lambda/N. Errors if mean-field scaling was already applied.
pub fn apply_scaling(params: &ValidatedParams, mode: ScalingMode) -> Result<ValidatedParams> {
    match mode {
        ScalingMode::Raw => Ok(*params),
        ScalingMode::MeanField => {
            if params.mean_field_applied {
                return Err(Error::InvalidParameter(
                    "mean-field scaling already applied; pass raw params".into(),
                ));
            }
            let mut p = params.params;
            p.lambda /= f64::from(p.n_agents);
            Ok(ValidatedParams {
                params: p,
                mean_field_applied: true,
            })
        }
    }
}

/// Raw config file contents. Flat keys matching the parameter names; `gamma`
/// may instead be given as `gamma_coeff`, in which case
/// gamma = gamma_coeff * sigma_p^2 (the default calibration's convention).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    beta: f64,
    sigma: f64,
    #[serde(default)]
    sigma_p: f64,
    rho: f64,
    #[serde(alias = "gamma_")]
    gamma: Option<f64>,
    gamma_coeff: Option<f64>,
    #[serde(alias = "lambda_")]
    lambda: f64,
    n_agents: u32,
    scaling: Option<ScalingMode>,
}

/// A parsed config: validated parameters plus the requested scaling mode
/// (defaults to `Raw` when the file does not say).
#[derive(Debug, Clone, Copy)]
pub struct Config {
    pub params: ValidatedParams,
    pub scaling: ScalingMode,
}

/// Loads a flat key-value (TOML) config file and validates it.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<Config> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
    let gamma = match (file.gamma, file.gamma_coeff) {
        (Some(g), None) => g,
        (None, Some(c)) => c * file.sigma_p * file.sigma_p,
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either gamma or gamma_coeff, not both".into(),
            ))
        }
        (None, None) => return Err(Error::Config("missing gamma (or gamma_coeff)".into())),
    };
    let params = validate(ModelParams {
        beta: file.beta,
        sigma: file.sigma,
        sigma_p: file.sigma_p,
        rho: file.rho,
        gamma,
        lambda: file.lambda,
        n_agents: file.n_agents,
    })?;
    Ok(Config {
        params,
        scaling: file.scaling.unwrap_or(ScalingMode::Raw),
    })
}
