use thiserror::Error;

/// Errors surfaced by the solvers and the simulation engine.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A model parameter violates its domain; names the first offending field.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A square-root argument went negative or an expression left its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Root selection on the limiting cubic failed to isolate a single candidate.
    #[error("no admissible root: {0}")]
    NoAdmissibleRoot(String),

    /// The scalar solve did not reach tolerance within the iteration budget.
    #[error("no convergence after {iterations} iterations (|phi| = {phi_residual:.3e})")]
    NoConvergence { iterations: u32, phi_residual: f64 },

    /// A sign constraint required by the equilibrium branch failed; the
    /// price-impact parameter is too large for the solved regime.
    #[error("branch invalid: {0}")]
    BranchInvalid(String),

    /// A denominator in the coefficient recovery vanished; names which one.
    #[error("denominator vanished: {0}")]
    DenominatorVanished(String),

    /// Sign constraint on a recovered coefficient failed; names it.
    #[error("sign constraint violated: {0}")]
    SignConstraint(String),

    /// Simulation configuration or policy set outside the supported contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Config file could not be read or parsed.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the equilibrium solve itself (as opposed to bad
    /// inputs); the CLI maps these to a distinct exit code.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::BranchInvalid(_)
                | Error::DenominatorVanished(_)
                | Error::SignConstraint(_)
                | Error::NoAdmissibleRoot(_)
                | Error::Domain(_)
        )
    }
}
