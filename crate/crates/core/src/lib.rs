//! Equilibria of an N-player price-impact trading game with a mean-reverting
//! trading signal.
//!
//! N identical agents trade one risky asset whose expected return follows an
//! Ornstein-Uhlenbeck signal. Their aggregate trading rate moves the
//! execution price linearly (temporary impact), so each agent's
//! discounted-objective optimization is coupled to the others'. This crate
//! computes:
//!
//! - the symmetric **closed-loop Nash equilibrium** (agents react to
//!   out-of-equilibrium deviations through their feedback rules), via a
//!   scalar root-finding problem and exact coefficient recovery
//!   ([`equilibrium`]);
//! - the **open-loop** equilibrium and **central-planner** benchmark in
//!   closed form, and the small-impact asymptotics shared by all three,
//!   including the competition multiplier Delta(N) ([`benchmarks`]);
//! - closed-form values of arbitrary symmetric linear policies and HJB
//!   residual checks ([`valuation`]);
//! - a deterministic, path-parallel Monte Carlo engine with paired
//!   unilateral-deviation experiments ([`simulate`]).

pub mod benchmarks;
pub mod equilibrium;
pub mod error;
pub mod model;
pub mod simulate;
pub mod valuation;

pub use benchmarks::{AsymptoticPolicy, ValueBreakdown};
pub use equilibrium::{CoefficientSet, Policy, SolveReport};
pub use error::{Error, Result};
pub use model::{
    apply_scaling, load_config, validate, Config, EquilibriumKind, ModelParams, ScalingMode,
    ValidatedParams,
};
pub use simulate::{
    DeviationReport, FeedbackPolicy, PathBundle, Perturbation, SimConfig, ValueEstimate,
};
pub use valuation::State;
