//! Evaluates a list of closed-form bound requests into `bounds.json`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RunContext;
use crate::bounds::{
    abstention_bound, amplification_check, fold_collapse_requirement, horizon_success_bound, iso_bound_linearized,
    iso_bound_sup_over_r, iso_lower_bound, precision_lower_bound, reliability_window, required_density,
    required_refinement_steps, trilemma_bound, AmplificationInputs, IsoBoundInputs, PrecisionInputs, RadiusEntry,
};
use crate::error::{Error, Result};
use crate::special::chi_tail;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BoundRequest {
    Iso(IsoBoundInputs),
    IsoLinearized(IsoBoundInputs),
    IsoSup {
        profile: Vec<RadiusEntry>,
        gap_halfwidth: f64,
        latent_dim: usize,
    },
    Precision {
        #[serde(flatten)]
        inputs: PrecisionInputs,
        density_cap: f64,
    },
    RequiredDensity {
        #[serde(flatten)]
        inputs: PrecisionInputs,
        eta: f64,
    },
    Trilemma {
        #[serde(flatten)]
        inputs: PrecisionInputs,
        folds: f64,
        sigma_star: f64,
        rho_max: f64,
    },
    FoldCollapse {
        #[serde(flatten)]
        inputs: PrecisionInputs,
        rho_max: f64,
        eta: f64,
    },
    RefinementSteps {
        #[serde(flatten)]
        inputs: PrecisionInputs,
        eta: f64,
        lambda: f64,
        c_rho: f64,
    },
    /// Either explicit `gammas`, or a constant `gamma` over `horizon` steps.
    Horizon {
        #[serde(default)]
        gammas: Option<Vec<f64>>,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        horizon: Option<usize>,
    },
    ReliabilityWindow {
        alpha: f64,
        beta: f64,
        eps_fp: f64,
        #[serde(default)]
        eps_fn: f64,
        rho: f64,
    },
    Abstention {
        rhos: Vec<f64>,
        c: f64,
        #[serde(default)]
        beta: Option<f64>,
    },
    Amplification(AmplificationInputs),
    ChiTail {
        radius: f64,
        dim: usize,
    },
}

impl BoundRequest {
    pub fn op(&self) -> &'static str {
        match self {
            BoundRequest::Iso(_) => "iso",
            BoundRequest::IsoLinearized(_) => "iso_linearized",
            BoundRequest::IsoSup { .. } => "iso_sup",
            BoundRequest::Precision { .. } => "precision",
            BoundRequest::RequiredDensity { .. } => "required_density",
            BoundRequest::Trilemma { .. } => "trilemma",
            BoundRequest::FoldCollapse { .. } => "fold_collapse",
            BoundRequest::RefinementSteps { .. } => "refinement_steps",
            BoundRequest::Horizon { .. } => "horizon",
            BoundRequest::ReliabilityWindow { .. } => "reliability_window",
            BoundRequest::Abstention { .. } => "abstention",
            BoundRequest::Amplification(_) => "amplification",
            BoundRequest::ChiTail { .. } => "chi_tail",
        }
    }

    pub fn evaluate(&self) -> Result<Value> {
        Ok(match self {
            BoundRequest::Iso(i) => serde_json::to_value(iso_lower_bound(i)?)?,
            BoundRequest::IsoLinearized(i) => serde_json::to_value(iso_bound_linearized(i)?)?,
            BoundRequest::IsoSup {
                profile,
                gap_halfwidth,
                latent_dim,
            } => serde_json::to_value(iso_bound_sup_over_r(profile, *gap_halfwidth, *latent_dim)?)?,
            BoundRequest::Precision { inputs, density_cap } => {
                serde_json::to_value(precision_lower_bound(inputs, *density_cap)?)?
            }
            BoundRequest::RequiredDensity { inputs, eta } => json!({"density_cap": required_density(inputs, *eta)?}),
            BoundRequest::Trilemma {
                inputs,
                folds,
                sigma_star,
                rho_max,
            } => serde_json::to_value(trilemma_bound(inputs, *folds, *sigma_star, *rho_max)?)?,
            BoundRequest::FoldCollapse { inputs, rho_max, eta } => {
                json!({"threshold": fold_collapse_requirement(inputs, *rho_max, *eta)?})
            }
            BoundRequest::RefinementSteps {
                inputs,
                eta,
                lambda,
                c_rho,
            } => serde_json::to_value(required_refinement_steps(inputs, *eta, *lambda, *c_rho)?)?,
            BoundRequest::Horizon { gammas, gamma, horizon } => {
                let g = match (gammas, gamma, horizon) {
                    (Some(g), None, None) => g.clone(),
                    (None, Some(g), Some(t)) => vec![*g; *t],
                    _ => {
                        return Err(Error::config(
                            "horizon needs either `gammas` or both `gamma` and `horizon`",
                        ))
                    }
                };
                serde_json::to_value(horizon_success_bound(&g)?)?
            }
            BoundRequest::ReliabilityWindow {
                alpha,
                beta,
                eps_fp,
                eps_fn,
                rho,
            } => serde_json::to_value(reliability_window(*alpha, *beta, *eps_fp, *eps_fn, *rho)?)?,
            BoundRequest::Abstention { rhos, c, beta } => serde_json::to_value(abstention_bound(rhos, *c, *beta)?)?,
            BoundRequest::Amplification(a) => serde_json::to_value(amplification_check(a)?)?,
            BoundRequest::ChiTail { radius, dim } => json!({"value": chi_tail(*radius, *dim)?}),
        })
    }
}

pub fn run_bounds(ctx: &mut RunContext) -> Result<()> {
    if ctx.dry_run {
        return Ok(());
    }
    let reqs = ctx.config.bounds.clone();
    let mut out = Vec::with_capacity(reqs.len());
    for r in &reqs {
        out.push(json!({"op": r.op(), "result": r.evaluate()?}));
    }
    ctx.write_json("bounds.json", &out)
}
