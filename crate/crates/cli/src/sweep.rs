//! Parameter sweeps over the number of agents or the impact parameter,
//! emitting one CSV row per value. Rows are computed in parallel and emitted
//! in input order; failed rows carry the error in the status column.

use std::path::Path;

use clap::ValueEnum;
use rayon::prelude::*;

use impact_game_core::benchmarks::{
    asymptotic_policy, central_planner_policy, central_planner_value, frictionless_value,
    open_loop_policy, open_loop_value,
};
use impact_game_core::equilibrium::closed_loop_policy;
use impact_game_core::model::{apply_scaling, load_config, validate, EquilibriumKind, ScalingMode};
use impact_game_core::valuation::closed_form_value;
use impact_game_core::Error;

use crate::output::{csv_safe, format_significant, write_text};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepVariable {
    /// Sweep the number of agents.
    #[value(alias = "n_agents")]
    NAgents,
    /// Sweep the temporary-impact coefficient.
    #[value(alias = "lambda_")]
    Lambda,
}

pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: String,
    pub scaling: Option<ScalingMode>,
    pub columns: Option<String>,
}

const ALL_COLUMNS: &[&str] = &[
    "cp_rate_mult",
    "cl_rate_mult",
    "ol_rate_mult",
    "cp_asym_rate_mult",
    "cl_asym_rate_mult",
    "ol_asym_rate_mult",
    "cp_aim",
    "cl_aim",
    "ol_aim",
    "cp_value",
    "cl_value",
    "ol_value",
    "cp_value_frac",
    "cl_value_frac",
    "ol_value_frac",
    "ratio_cl_ol",
];

enum SweepValues {
    Agents(Vec<u32>),
    Lambdas(Vec<f64>),
}

fn parse_values(spec: &SweepSpec) -> Result<SweepValues, Error> {
    let text = spec.values.trim();
    if text.is_empty() {
        return Err(Error::Config("sweep values must be nonempty".into()));
    }
    match spec.variable {
        SweepVariable::NAgents => {
            let values: Vec<u32> = if let Some((lo, hi)) = text.split_once("..") {
                let lo: u32 = lo
                    .trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("bad range start {lo:?}: {e}")))?;
                let hi: u32 = hi
                    .trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("bad range end {hi:?}: {e}")))?;
                if hi < lo {
                    return Err(Error::Config(format!("empty range {lo}..{hi}")));
                }
                (lo..=hi).collect()
            } else {
                text.split(',')
                    .map(|v| {
                        v.trim()
                            .parse()
                            .map_err(|e| Error::Config(format!("bad n_agents {v:?}: {e}")))
                    })
                    .collect::<Result<_, _>>()?
            };
            if values.iter().any(|n| *n < 2) {
                return Err(Error::Config("all n_agents values must be >= 2".into()));
            }
            Ok(SweepValues::Agents(values))
        }
        SweepVariable::Lambda => {
            let values: Vec<f64> = text
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("bad lambda {v:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            Ok(SweepValues::Lambdas(values))
        }
    }
}

struct Row {
    variable_cell: String,
    cells: Vec<(&'static str, String)>,
    status: String,
}

fn compute_row(
    base: impact_game_core::ModelParams,
    variable_cell: String,
    mode: ScalingMode,
) -> Row {
    let lambda_raw = base.lambda;
    let n = f64::from(base.n_agents);
    let result = validate(base)
        .and_then(|p| apply_scaling(&p, mode))
        .and_then(|params| closed_loop_policy(&params).map(|cl| (params, cl)));
    match result {
        Ok((params, (cl_policy, _, _))) => {
            let mult_scale = (lambda_raw / params.gamma()).sqrt();
            let cp = central_planner_policy(&params);
            let ol = open_loop_policy(&params);
            let frictionless = frictionless_value(&params);
            let j_cp = central_planner_value(&params);
            let j_ol = open_loop_value(&params);
            let j_cl = closed_form_value(&params, &cl_policy);
            // the leading multipliers are stated at the solved lambda; under
            // mean-field scaling the raw-lambda multiplier gains sqrt(N)
            let mf_factor = if mode == ScalingMode::MeanField {
                n.sqrt()
            } else {
                1.0
            };
            let asym = |kind| {
                asymptotic_policy(params.n_agents(), kind)
                    .map(|a| a.rate_leading * mf_factor)
                    .unwrap_or(f64::NAN)
            };
            let cl_asym = asym(EquilibriumKind::ClosedLoop);
            let ol_asym = asym(EquilibriumKind::OpenLoop);
            let cp_asym = asym(EquilibriumKind::CentralPlanner);
            let cells: Vec<(&'static str, String)> = vec![
                ("cp_rate_mult", format_significant(mult_scale * cp.m_rate)),
                (
                    "cl_rate_mult",
                    format_significant(mult_scale * cl_policy.m_rate),
                ),
                ("ol_rate_mult", format_significant(mult_scale * ol.m_rate)),
                ("cp_asym_rate_mult", format_significant(cp_asym)),
                ("cl_asym_rate_mult", format_significant(cl_asym)),
                ("ol_asym_rate_mult", format_significant(ol_asym)),
                ("cp_aim", format_significant(cp.m_aim)),
                ("cl_aim", format_significant(cl_policy.m_aim)),
                ("ol_aim", format_significant(ol.m_aim)),
                ("cp_value", format_significant(j_cp)),
                ("cl_value", format_significant(j_cl)),
                ("ol_value", format_significant(j_ol)),
                ("cp_value_frac", format_significant(j_cp / frictionless)),
                ("cl_value_frac", format_significant(j_cl / frictionless)),
                ("ol_value_frac", format_significant(j_ol / frictionless)),
                ("ratio_cl_ol", format_significant(j_cl / j_ol)),
            ];
            Row {
                variable_cell,
                cells,
                status: "ok".into(),
            }
        }
        Err(err) => Row {
            variable_cell,
            cells: ALL_COLUMNS.iter().map(|c| (*c, String::new())).collect(),
            status: format!("error: {}", csv_safe(&err.to_string())),
        },
    }
}

/// Runs the sweep; returns Ok(true) when every row solved.
pub fn run_sweep(config_path: &Path, spec: &SweepSpec, out: Option<&Path>) -> Result<bool, Error> {
    let cfg = load_config(config_path)?;
    let mode = spec.scaling.unwrap_or(cfg.scaling);
    let values = parse_values(spec)?;

    let selected: Vec<&'static str> = match &spec.columns {
        None => ALL_COLUMNS.to_vec(),
        Some(list) => list
            .split(',')
            .map(|c| {
                let c = c.trim();
                ALL_COLUMNS
                    .iter()
                    .find(|k| **k == c)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("unknown column {c:?}")))
            })
            .collect::<Result<_, _>>()?,
    };

    let base = *cfg.params.params();
    let rows: Vec<Row> = match values {
        SweepValues::Agents(ns) => ns
            .par_iter()
            .map(|n| {
                let mut p = base;
                p.n_agents = *n;
                compute_row(p, n.to_string(), mode)
            })
            .collect(),
        SweepValues::Lambdas(ls) => ls
            .par_iter()
            .map(|l| {
                let mut p = base;
                p.lambda = *l;
                compute_row(p, format_significant(*l), mode)
            })
            .collect(),
    };

    let variable_name = match spec.variable {
        SweepVariable::NAgents => "n_agents",
        SweepVariable::Lambda => "lambda",
    };
    let mut csv = String::new();
    csv.push_str(variable_name);
    for col in &selected {
        csv.push(',');
        csv.push_str(col);
    }
    csv.push_str(",status\n");
    let mut all_ok = true;
    for row in &rows {
        csv.push_str(&row.variable_cell);
        for col in &selected {
            csv.push(',');
            if let Some((_, cell)) = row.cells.iter().find(|(name, _)| name == col) {
                csv.push_str(cell);
            }
        }
        csv.push(',');
        csv.push_str(&row.status);
        csv.push('\n');
        all_ok &= row.status == "ok";
    }
    write_text(out, &csv)?;
    Ok(all_ok)
}
