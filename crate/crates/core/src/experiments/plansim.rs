//! Schedule comparison on the verifier-gated planner.

use serde::{Deserialize, Serialize};

use super::RunContext;
use crate::bounds::{amplification_check, AmplificationInputs, AmplificationReport};
use crate::error::Result;
use crate::planner_sim::{compare_schedules, schedule_label, CompareConfig, ComparisonTable};

/// Analytic check of one schedule at the largest budget of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub schedule: String,
    /// Smallest grid budget meeting (α, β) in simulation.
    pub mc_crossover: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplification: Option<AmplificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn summarize(cfg: &CompareConfig, table: &ComparisonTable) -> Vec<ScheduleSummary> {
    let q = cfg.q_grid.iter().copied().max().unwrap_or(1);
    cfg.schedules
        .iter()
        .map(|s| {
            let label = schedule_label(s);
            let mc_crossover = table.crossovers.iter().find(|c| c.schedule == label).and_then(|c| c.q);
            let check = amplification_check(&AmplificationInputs {
                schedule: *s,
                gamma: cfg.gamma,
                horizon: cfg.horizon,
                alpha: cfg.alpha,
                beta: cfg.beta,
                c: 1.0 - cfg.eps_fn,
                eps_fp: cfg.eps_fp,
                q,
            });
            let (amplification, error) = match check {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ScheduleSummary {
                schedule: label,
                mc_crossover,
                amplification,
                error,
            }
        })
        .collect()
}

pub fn run_plansim(ctx: &mut RunContext) -> Result<()> {
    let seed = ctx.seed("plansim/compare");
    let cfg = ctx.config.plansim.clone();
    if ctx.dry_run {
        return Ok(());
    }
    let table = compare_schedules(&cfg, seed)?;
    ctx.write_csv("plansim_comparison.csv", |buf| table.write_csv(buf))?;
    let summary = summarize(&cfg, &table);
    ctx.write_json(
        "plansim_crossovers.json",
        &serde_json::json!({ "crossovers": table.crossovers, "schedules": summary }),
    )
}
