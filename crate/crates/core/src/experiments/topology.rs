//! Hallucination rate across band topologies: one trained head per
//! (head, M, W, seed) cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heads::{band, train_head, write_losses, TrainedHead};
use super::{fmt, ExperimentConfig, RunContext};
use crate::bounds::{iso_lower_bound, BoundResult, IsoBoundInputs};
use crate::error::Result;
use crate::heads::HeadKind;
use crate::metrics::{
    estimate_hallucination_in_ball, estimate_lipschitz, seam_map, write_seam_csv, HallucinationReport, LatentGrid,
    LipschitzEstimate,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub head: HeadKind,
    pub modes: usize,
    pub gap: f64,
    pub seed_index: usize,
}

impl CellSpec {
    pub fn label(&self) -> String {
        format!(
            "topology/{}/M{}/W{}/s{}",
            self.head.name(),
            self.modes,
            self.gap,
            self.seed_index
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub train: u64,
    pub eval: u64,
    pub lipschitz: u64,
}

impl CellSeeds {
    /// Derives the three stage seeds of `spec`, recording them in `ctx`.
    pub fn record(ctx: &mut RunContext, spec: &CellSpec) -> Self {
        let l = spec.label();
        Self {
            train: ctx.seed(&format!("{l}/train")),
            eval: ctx.seed(&format!("{l}/eval")),
            lipschitz: ctx.seed(&format!("{l}/lipschitz")),
        }
    }

    pub fn derive(cfg: &ExperimentConfig, spec: &CellSpec) -> Self {
        let l = spec.label();
        Self {
            train: cfg.stage_seed(&format!("{l}/train")),
            eval: cfg.stage_seed(&format!("{l}/eval")),
            lipschitz: cfg.stage_seed(&format!("{l}/lipschitz")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub spec: CellSpec,
    pub seeds: CellSeeds,
    pub report: HallucinationReport,
    /// Probe-level σ_max values are dropped; max and quantiles are kept.
    pub lipschitz: LipschitzEstimate,
    pub w_over_l: f64,
    pub iso_bound: Option<BoundResult>,
    /// Mean of the last (up to) 100 training losses.
    pub final_loss: f64,
}

/// A finished cell together with its head, so callers can run further diagnostics.
pub struct TrainedCell {
    pub result: CellResult,
    pub head: TrainedHead,
    pub losses: Vec<f64>,
}

fn tail_mean(losses: &[f64], k: usize) -> f64 {
    let t = &losses[losses.len().saturating_sub(k)..];
    if t.is_empty() {
        f64::NAN
    } else {
        t.iter().sum::<f64>() / t.len() as f64
    }
}

/// Trains and evaluates one cell.
pub fn run_cell(cfg: &ExperimentConfig, spec: CellSpec, seeds: CellSeeds) -> Result<TrainedCell> {
    let geom = band(spec.modes, cfg.topology.strip_halfwidth, spec.gap)?;
    let (head, log) = train_head(spec.head, &geom, &cfg.head, &cfg.train, seeds.train)?;
    let e = &cfg.eval;
    let report = head.with_bulk_sampler(|s| {
        estimate_hallucination_in_ball(s, &geom, e.samples, e.batch, seeds.eval, Some(e.lipschitz_radius))
    })?;
    let mut lipschitz = head
        .with_sampler(|s| estimate_lipschitz(s, e.lipschitz_radius, e.lipschitz_probes, e.fd_step, seeds.lipschitz))?;
    lipschitz.sigma_max.clear();
    let w_over_l = spec.gap / lipschitz.max;
    let iso_bound = report.ball_masses().and_then(|masses| {
        iso_lower_bound(&IsoBoundInputs {
            masses,
            gap_halfwidth: spec.gap,
            lipschitz: lipschitz.max,
            radius: e.lipschitz_radius,
            latent_dim: 2,
        })
        .ok()
    });
    let result = CellResult {
        spec,
        seeds,
        report,
        lipschitz,
        w_over_l,
        iso_bound,
        final_loss: tail_mean(&log.losses, 100),
    };
    Ok(TrainedCell {
        result,
        head,
        losses: log.losses,
    })
}

/// Cells in sweep order: head, then M, then W, then seed.
pub fn cell_specs(cfg: &ExperimentConfig) -> Vec<CellSpec> {
    let t = &cfg.topology;
    let mut out = Vec::new();
    for &head in &t.heads {
        for &modes in &t.modes {
            for &gap in &t.gaps {
                for seed_index in 0..t.seeds {
                    out.push(CellSpec {
                        head,
                        modes,
                        gap,
                        seed_index,
                    });
                }
            }
        }
    }
    out
}

/// Seed-mean Ĥ per (head, M, W) with the standard error across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub head: HeadKind,
    pub modes: usize,
    pub gap: f64,
    pub seeds: usize,
    pub mean_h: f64,
    pub se_h: f64,
    pub mean_w_over_l: f64,
}

pub fn trend_rows(cells: &[CellResult]) -> Vec<TrendRow> {
    let mut rows: Vec<TrendRow> = Vec::new();
    let mut groups: Vec<(HeadKind, usize, f64, Vec<&CellResult>)> = Vec::new();
    for c in cells {
        let s = &c.spec;
        match groups
            .iter_mut()
            .find(|g| g.0 == s.head && g.1 == s.modes && g.2 == s.gap)
        {
            Some(g) => g.3.push(c),
            None => groups.push((s.head, s.modes, s.gap, vec![c])),
        }
    }
    for (head, modes, gap, members) in groups {
        let n = members.len() as f64;
        let hs: Vec<f64> = members.iter().map(|c| c.report.h_hat()).collect();
        let mean = hs.iter().sum::<f64>() / n;
        let var = if members.len() > 1 {
            hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        rows.push(TrendRow {
            head,
            modes,
            gap,
            seeds: members.len(),
            mean_h: mean,
            se_h: (var / n).sqrt(),
            mean_w_over_l: members.iter().map(|c| c.w_over_l).sum::<f64>() / n,
        });
    }
    rows
}

fn write_tables(ctx: &mut RunContext, cells: &[CellResult]) -> Result<()> {
    ctx.write_csv("topology_cells.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "head",
            "M",
            "W",
            "seed",
            "H_hat",
            "ci_lo",
            "ci_hi",
            "min_mode_mass",
            "L_hat",
            "L_q50",
            "L_q90",
            "L_q99",
            "W_over_L",
            "iso_bound",
            "final_loss",
        ])?;
        for c in cells {
            let s = &c.spec;
            let min_mass = c.report.mode_masses().into_iter().fold(f64::INFINITY, f64::min);
            let q = |i: usize| c.lipschitz.quantiles.get(i).map(|p| fmt(p.1)).unwrap_or_default();
            w.write_record([
                s.head.name().to_string(),
                s.modes.to_string(),
                fmt(s.gap),
                s.seed_index.to_string(),
                fmt(c.report.h_hat()),
                fmt(c.report.hallucination.ci_lo),
                fmt(c.report.hallucination.ci_hi),
                fmt(min_mass),
                fmt(c.lipschitz.max),
                q(0),
                q(1),
                q(2),
                fmt(c.w_over_l),
                c.iso_bound.as_ref().map(|b| fmt(b.raw)).unwrap_or_default(),
                fmt(c.final_loss),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let trend = trend_rows(cells);
    ctx.write_csv("h_vs_m.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["head", "M", "W", "seeds", "mean_H", "se_H"])?;
        for r in &trend {
            w.write_record([
                r.head.name().to_string(),
                r.modes.to_string(),
                fmt(r.gap),
                r.seeds.to_string(),
                fmt(r.mean_h),
                fmt(r.se_h),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write_csv("h_vs_wl.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["head", "M", "W", "seeds", "mean_W_over_L", "mean_H", "se_H"])?;
        let mut sorted = trend.clone();
        sorted.sort_by(|a, b| {
            (a.head.name(), a.modes)
                .cmp(&(b.head.name(), b.modes))
                .then(a.mean_w_over_l.total_cmp(&b.mean_w_over_l))
        });
        for r in &sorted {
            w.write_record([
                r.head.name().to_string(),
                r.modes.to_string(),
                fmt(r.gap),
                r.seeds.to_string(),
                fmt(r.mean_w_over_l),
                fmt(r.mean_h),
                fmt(r.se_h),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write_json("topology_cells.json", &cells)
}

pub fn run_topology(ctx: &mut RunContext) -> Result<()> {
    let specs = cell_specs(&ctx.config);
    let seeds: Vec<CellSeeds> = specs.iter().map(|s| CellSeeds::record(ctx, s)).collect();
    if ctx.dry_run {
        return Ok(());
    }
    let cfg = ctx.config.clone();
    let outcomes: Vec<Result<TrainedCell>> = specs
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(&spec, &s)| run_cell(&cfg, spec, s))
        .collect();
    let mut cells = Vec::new();
    for (spec, out) in specs.iter().zip(outcomes) {
        match out {
            Ok(tc) => {
                // The first (M, W) of seed 0 gets its losses and seam map written.
                let first =
                    spec.seed_index == 0 && spec.modes == cfg.topology.modes[0] && spec.gap == cfg.topology.gaps[0];
                if first {
                    let head = spec.head.name();
                    write_losses(ctx, &format!("losses_{head}.csv"), &tc.losses)?;
                    let geom = band(spec.modes, cfg.topology.strip_halfwidth, spec.gap)?;
                    let grid = LatentGrid::square(cfg.topology.seam_half, cfg.topology.seam_grid);
                    match tc.head.with_sampler(|s| seam_map(s, &geom, &grid)) {
                        Ok(pts) => ctx.write_csv(&format!("seam_{head}.csv"), |buf| write_seam_csv(buf, &pts))?,
                        Err(e) => ctx.fail(format!("{}/seam", spec.label()), &e),
                    }
                }
                cells.push(tc.result);
            }
            Err(e) => ctx.fail(spec.label(), &e),
        }
    }
    write_tables(ctx, &cells)
}
