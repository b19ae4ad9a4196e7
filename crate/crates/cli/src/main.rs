//! Command-line front end for the trading-game equilibrium library.
//!
//! Exit codes are part of the interface:
//! 0 success, 1 config error, 2 solver failure, 3 partial sweep failure,
//! 4 strict Monte Carlo band violation.

mod output;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use impact_game_core::benchmarks::{
    central_planner_policy, central_planner_value, frictionless_value, open_loop_policy,
    open_loop_value,
};
use impact_game_core::equilibrium::closed_loop_policy;
use impact_game_core::model::{apply_scaling, load_config, ScalingMode, ValidatedParams};
use impact_game_core::simulate::{
    deviation_experiment, estimate_value, DeviationReport, FeedbackPolicy, Perturbation, SimConfig,
};
use impact_game_core::valuation::closed_form_value;
use impact_game_core::Error;

use output::{format_significant, write_text};
use sweep::{run_sweep, SweepSpec, SweepVariable};

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_PARTIAL_SWEEP: u8 = 3;
const EXIT_STRICT_MC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "impact-game",
    about = "Closed-loop, open-loop and central-planner equilibria of an \
             N-player price-impact trading game",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    Raw,
    MeanField,
}

impl From<ScalingArg> for ScalingMode {
    fn from(value: ScalingArg) -> Self {
        match value {
            ScalingArg::Raw => ScalingMode::Raw,
            ScalingArg::MeanField => ScalingMode::MeanField,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the closed-loop equilibrium and print policy, coefficients and
    /// solve diagnostics as JSON.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's scaling mode.
        #[arg(long, value_enum)]
        scaling: Option<ScalingArg>,
    },
    /// Print one CSV row per equilibrium kind: rate, aim, value, and value
    /// as a fraction of the frictionless optimum.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        scaling: Option<ScalingArg>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep n_agents or lambda and write a CSV of rates, aims, values and
    /// asymptotic multipliers.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        variable: SweepVariable,
        /// Comma-separated values, or an inclusive integer range like 2..50
        /// for n_agents.
        #[arg(long)]
        values: String,
        #[arg(long, value_enum)]
        scaling: Option<ScalingArg>,
        /// Comma-separated subset of output columns (default: all).
        #[arg(long)]
        columns: Option<String>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the closed-loop value, cross-checked against
    /// the closed form, with optional unilateral-deviation experiments.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        scaling: Option<ScalingArg>,
        #[arg(long, default_value_t = 0.25)]
        dt: f64,
        #[arg(long, default_value_t = 200.0)]
        horizon: f64,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        mu0: f64,
        /// Scale agent 1's trading speed by this factor and report the
        /// paired deviation estimate.
        #[arg(long)]
        deviate: Option<f64>,
        /// Scale agent 1's aim multiplier by this factor.
        #[arg(long)]
        deviate_aim: Option<f64>,
        /// Exit 4 when the Monte Carlo band or the Nash property fails.
        #[arg(long)]
        strict: bool,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    if err.is_solver_failure() {
        EXIT_SOLVER
    } else {
        EXIT_CONFIG
    }
}

fn load_scaled(config: &Path, scaling: Option<ScalingArg>) -> Result<ValidatedParams, Error> {
    let cfg = load_config(config)?;
    let mode = scaling.map(ScalingMode::from).unwrap_or(cfg.scaling);
    apply_scaling(&cfg.params, mode)
}

fn cmd_solve(config: &Path, scaling: Option<ScalingArg>) -> Result<(), Error> {
    let params = load_scaled(config, scaling)?;
    let (policy, coefficients, report) = closed_loop_policy(&params)?;
    if report.c_cross_check > 1e-8 {
        eprintln!(
            "warning: c-coefficient cross-check discrepancy {:.3e} exceeds 1e-8",
            report.c_cross_check
        );
    }
    #[derive(Serialize)]
    struct SolveOutput<'a> {
        params: &'a ValidatedParams,
        policy: &'a impact_game_core::Policy,
        coefficients: &'a impact_game_core::CoefficientSet,
        report: &'a impact_game_core::SolveReport,
    }
    let out = SolveOutput {
        params: &params,
        policy: &policy,
        coefficients: &coefficients,
        report: &report,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("serializable")
    );
    Ok(())
}

fn cmd_compare(
    config: &Path,
    scaling: Option<ScalingArg>,
    out: Option<&Path>,
) -> Result<(), Error> {
    let params = load_scaled(config, scaling)?;
    let frictionless = frictionless_value(&params);
    let (cl_policy, _, _) = closed_loop_policy(&params)?;
    let ol_policy = open_loop_policy(&params);
    let cp_policy = central_planner_policy(&params);
    let rows = [
        (ol_policy, open_loop_value(&params)),
        (cl_policy, closed_form_value(&params, &cl_policy)),
        (cp_policy, central_planner_value(&params)),
    ];
    let mut csv = String::from("kind,m_rate,m_aim,value,value_frac\n");
    for (policy, value) in rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            policy.kind.label(),
            format_significant(policy.m_rate),
            format_significant(policy.m_aim),
            format_significant(value),
            format_significant(value / frictionless),
        ));
    }
    write_text(out, &csv)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &Path,
    scaling: Option<ScalingArg>,
    sim: SimConfig,
    deviate: Option<f64>,
    deviate_aim: Option<f64>,
    strict: bool,
) -> Result<bool, Error> {
    let params = load_scaled(config, scaling)?;
    sim.validate(&params)?;
    let (policy, _, _) = closed_loop_policy(&params)?;
    let feedback = FeedbackPolicy::from_policy(&policy, params.gamma());
    let policies = vec![feedback; params.n_agents() as usize];
    let estimate = estimate_value(&params, &policies, 0, &sim)?;

    // the closed-form comparison assumes a zero initial signal
    let closed = (sim.mu0 == 0.0).then(|| closed_form_value(&params, &policy));
    let within_3se = closed.map(|c| (estimate.mean - c).abs() <= 3.0 * estimate.std_error);

    #[derive(Serialize)]
    struct DeviationOutput {
        perturbation: Perturbation,
        target: &'static str,
        factor: f64,
        report: DeviationReport,
        /// deviant mean <= equilibrium mean + 3 paired SE
        nash_holds: bool,
    }
    let mut deviations = Vec::new();
    for (target, factor, pert) in deviate
        .map(|f| ("m_rate", f, Perturbation::m_rate(f)))
        .into_iter()
        .chain(deviate_aim.map(|f| ("m_aim", f, Perturbation::m_aim(f))))
    {
        let report = deviation_experiment(&params, &sim, &pert)?;
        let nash_holds = report.difference.mean <= 3.0 * report.difference.std_error;
        deviations.push(DeviationOutput {
            perturbation: pert,
            target,
            factor,
            report,
            nash_holds,
        });
    }

    #[derive(Serialize)]
    struct SimulateOutput<'a> {
        params: &'a ValidatedParams,
        sim: &'a SimConfig,
        policy: &'a impact_game_core::Policy,
        estimate: &'a impact_game_core::ValueEstimate,
        closed_form: Option<f64>,
        within_3se: Option<bool>,
        deviations: &'a [DeviationOutput],
    }
    let out = SimulateOutput {
        params: &params,
        sim: &sim,
        policy: &policy,
        estimate: &estimate,
        closed_form: closed,
        within_3se,
        deviations: &deviations,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("serializable")
    );

    let ok = within_3se.unwrap_or(true) && deviations.iter().all(|d| d.nash_holds);
    Ok(!strict || ok)
}

fn run() -> u8 {
    let cli = Cli::parse();
    let result: Result<u8, Error> = match &cli.command {
        Command::Solve { config, scaling } => cmd_solve(config, *scaling).map(|()| 0),
        Command::Compare {
            config,
            scaling,
            out,
        } => cmd_compare(config, *scaling, out.as_deref()).map(|()| 0),
        Command::Sweep {
            config,
            variable,
            values,
            scaling,
            columns,
            out,
        } => {
            let spec = SweepSpec {
                variable: *variable,
                values: values.clone(),
                scaling: scaling.map(ScalingMode::from),
                columns: columns.clone(),
            };
            run_sweep(config, &spec, out.as_deref()).map(|all_ok| {
                if all_ok {
                    0
                } else {
                    EXIT_PARTIAL_SWEEP
                }
            })
        }
        Command::Simulate {
            config,
            scaling,
            dt,
            horizon,
            paths,
            seed,
            mu0,
            deviate,
            deviate_aim,
            strict,
        } => {
            let sim = SimConfig {
                dt: *dt,
                horizon: *horizon,
                n_paths: *paths,
                seed: *seed,
                mu0: *mu0,
            };
            cmd_simulate(config, *scaling, sim, *deviate, *deviate_aim, *strict).map(|ok| {
                if ok {
                    0
                } else {
                    EXIT_STRICT_MC
                }
            })
        }
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run())
}
