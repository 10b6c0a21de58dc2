//! Precision on the grasp manifold: distance-to-manifold curves for trained
//! heads and the noise baseline, plus per-step Jacobian conditioning vs K.

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heads::{train_head, TrainedHead};
use super::{fmt, ExperimentConfig, RunContext};
use crate::envs::grasp::CODIM;
use crate::envs::GraspManifold;
use crate::error::{Error, Result};
use crate::heads::{HeadKind, NoisyGrasp, StepSampler};
use crate::metrics::{distance_curve, distances, gaussian_latents, jacobian_chain, log_grid, DistanceCurve};
use crate::rng::{rng_from_seed, shard_rng, shards};
use crate::special::chi_cdf_scaled;

fn manifold(cfg: &ExperimentConfig) -> Result<GraspManifold> {
    let p = &cfg.precision;
    GraspManifold::new(p.ring_radius, p.h_min, p.h_max)
}

/// `n` sampler outputs from N(0, I) latents, drawn in shards of `batch`.
pub fn sample_actions<S: StepSampler<f64> + ?Sized>(
    sampler: &S,
    n: usize,
    batch: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let layout: Vec<_> = shards(n, batch).collect();
    let parts: Vec<Array2<f64>> = layout
        .into_par_iter()
        .map(|(idx, range)| {
            let mut rng = shard_rng(seed, idx as u64);
            let z = gaussian_latents(&mut rng, range.len(), sampler.dim());
            sampler.sample(z.view()).map_err(|e| Error::Sample {
                index: range.start,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::structural(e.to_string()))
}

/// Distance histogram on the δ grid's log bins, with an underflow bin
/// `[0, δ_min)` and an overflow bin `[δ_max, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn distance_histogram(sorted: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    let mut edges = vec![0.0];
    edges.extend(log_grid(lo, hi, bins.max(1) + 1)?);
    edges.push(f64::INFINITY);
    let counts = edges
        .windows(2)
        .map(|w| (sorted.partition_point(|&x| x < w[1]) - sorted.partition_point(|&x| x < w[0])) as u64)
        .collect();
    Ok(Histogram { edges, counts })
}

/// Noise baseline: training data compared with the survival of σ·χ(d − k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCurve {
    pub noise_sigma: f64,
    pub curve: DistanceCurve,
    pub chi_survival: Vec<f64>,
}

impl OracleCurve {
    pub fn max_abs_error(&self) -> f64 {
        self.curve
            .h_hat()
            .iter()
            .zip(&self.chi_survival)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn oracle_curve(cfg: &ExperimentConfig, seed: u64) -> Result<OracleCurve> {
    let p = &cfg.precision;
    let m = manifold(cfg)?;
    let data = m.sample_training(p.noise_sigma, cfg.eval.samples, &mut rng_from_seed(seed))?;
    let curve = distance_curve(data.view(), &m, p.delta_min, p.delta_max, p.delta_points)?;
    let chi_survival = curve
        .deltas
        .iter()
        .map(|&d| chi_cdf_scaled(d, CODIM, p.noise_sigma).map(|c| 1.0 - c))
        .collect::<Result<_>>()?;
    Ok(OracleCurve {
        noise_sigma: p.noise_sigma,
        curve,
        chi_survival,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCurve {
    pub curve: DistanceCurve,
    pub histogram: Histogram,
}

pub fn head_curve(cfg: &ExperimentConfig, head: &TrainedHead, seed: u64) -> Result<HeadCurve> {
    let p = &cfg.precision;
    let m = manifold(cfg)?;
    let a = head.with_sampler(|s| sample_actions(s, cfg.eval.samples, cfg.eval.batch, seed))?;
    let curve = distance_curve(a.view(), &m, p.delta_min, p.delta_max, p.delta_points)?;
    let (sorted, _) = distances(a.view(), &m)?;
    let histogram = distance_histogram(&sorted, p.delta_min, p.delta_max, p.histogram_bins)?;
    Ok(HeadCurve { curve, histogram })
}

/// Chain statistics at one step count, averaged over probe latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub k: usize,
    pub probes: usize,
    /// Mean over probes of exp(mean ln σ_min(J_k)).
    pub geometric_mean_sigma_min: f64,
    pub mean_global_sigma_min: f64,
    pub mean_global_sigma_max: f64,
}

pub fn chain_table(head: &TrainedHead, k_grid: &[usize], probes: usize, h: f64, seed: u64) -> Result<Vec<ChainRow>> {
    let mut rng = rng_from_seed(seed);
    let dim = head.with_sampler(|s| Ok(s.dim()))?;
    let z = gaussian_latents(&mut rng, probes, dim);
    k_grid
        .iter()
        .map(|&k| {
            let reps = head.with_steps(k, |s| {
                z.rows()
                    .into_iter()
                    .map(|r| jacobian_chain(s, r.as_slice().expect("row-major"), h))
                    .collect::<Result<Vec<_>>>()
            })?;
            let n = reps.len() as f64;
            let mean = |f: &dyn Fn(&crate::metrics::JacobianChainReport) -> f64| reps.iter().map(f).sum::<f64>() / n;
            Ok(ChainRow {
                k,
                probes,
                geometric_mean_sigma_min: mean(&|r| r.geometric_mean_sigma_min),
                mean_global_sigma_min: mean(&|r| r.global_sigma_min),
                mean_global_sigma_max: mean(&|r| r.global_sigma_max),
            })
        })
        .collect()
}

/// One trained head on the grasp data with its curve and chain table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCell {
    pub head: HeadKind,
    pub seed_index: usize,
    pub curve: HeadCurve,
    pub chain: Vec<ChainRow>,
}

pub fn precision_label(head: HeadKind, seed_index: usize) -> String {
    format!("precision/{}/s{seed_index}", head.name())
}

/// Trains `head` on the noisy grasp data and runs both diagnostics.
pub fn run_precision_cell(
    cfg: &ExperimentConfig,
    head: HeadKind,
    seed_index: usize,
) -> Result<(PrecisionCell, TrainedHead)> {
    let l = precision_label(head, seed_index);
    let p = &cfg.precision;
    let data = NoisyGrasp {
        manifold: manifold(cfg)?,
        noise_sigma: p.noise_sigma,
    };
    let (trained, _) = train_head(
        head,
        &data,
        &cfg.head,
        &cfg.train,
        cfg.stage_seed(&format!("{l}/train")),
    )?;
    let curve = head_curve(cfg, &trained, cfg.stage_seed(&format!("{l}/eval")))?;
    let chain = chain_table(
        &trained,
        &p.k_grid,
        p.chain_probes,
        p.chain_fd_step,
        cfg.stage_seed(&format!("{l}/chain")),
    )?;
    Ok((
        PrecisionCell {
            head,
            seed_index,
            curve,
            chain,
        },
        trained,
    ))
}

fn write_curves(ctx: &mut RunContext, oracle: &OracleCurve, cells: &[PrecisionCell]) -> Result<()> {
    ctx.write_csv("oracle_curve.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["delta", "H_hat", "ci_lo", "ci_hi", "chi5_survival"])?;
        for ((d, r), c) in oracle
            .curve
            .deltas
            .iter()
            .zip(&oracle.curve.rates)
            .zip(&oracle.chi_survival)
        {
            w.write_record([fmt(*d), fmt(r.rate), fmt(r.ci_lo), fmt(r.ci_hi), fmt(*c)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write_csv("distance_curves.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["head", "seed", "delta", "H_hat", "ci_lo", "ci_hi"])?;
        for c in cells {
            for (d, r) in c.curve.curve.deltas.iter().zip(&c.curve.curve.rates) {
                w.write_record([
                    c.head.name().to_string(),
                    c.seed_index.to_string(),
                    fmt(*d),
                    fmt(r.rate),
                    fmt(r.ci_lo),
                    fmt(r.ci_hi),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write_csv("distance_histogram.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["head", "seed", "lo", "hi", "count"])?;
        for c in cells {
            let h = &c.curve.histogram;
            for (e, n) in h.edges.windows(2).zip(&h.counts) {
                w.write_record([
                    c.head.name().to_string(),
                    c.seed_index.to_string(),
                    fmt(e[0]),
                    fmt(e[1]),
                    n.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write_csv("jacobian_chain.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "head",
            "seed",
            "K",
            "probes",
            "geo_mean_sigma_min",
            "global_sigma_min",
            "global_sigma_max",
        ])?;
        for c in cells {
            for r in &c.chain {
                w.write_record([
                    c.head.name().to_string(),
                    c.seed_index.to_string(),
                    r.k.to_string(),
                    r.probes.to_string(),
                    fmt(r.geometric_mean_sigma_min),
                    fmt(r.mean_global_sigma_min),
                    fmt(r.mean_global_sigma_max),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    let mut summary = Vec::new();
    for (head, k, mean) in chain_means(cells) {
        summary.push(serde_json::json!({"head": head, "K": k, "mean_geo_sigma_min": mean}));
    }
    ctx.write_json(
        "precision_report.json",
        &serde_json::json!({
            "oracle": oracle,
            "oracle_max_abs_error": oracle.max_abs_error(),
            "cells": cells,
            "chain_seed_means": summary,
        }),
    )
}

/// Seed-mean geometric-mean σ_min per (head, K), in first-seen order.
pub fn chain_means(cells: &[PrecisionCell]) -> Vec<(HeadKind, usize, f64)> {
    let mut acc: Vec<(HeadKind, usize, f64, usize)> = Vec::new();
    for c in cells {
        for r in &c.chain {
            match acc.iter_mut().find(|a| a.0 == c.head && a.1 == r.k) {
                Some(a) => {
                    a.2 += r.geometric_mean_sigma_min;
                    a.3 += 1;
                }
                None => acc.push((c.head, r.k, r.geometric_mean_sigma_min, 1)),
            }
        }
    }
    acc.into_iter().map(|(h, k, s, n)| (h, k, s / n as f64)).collect()
}

pub fn run_precision(ctx: &mut RunContext) -> Result<()> {
    let oracle_seed = ctx.seed("precision/oracle");
    let p = ctx.config.precision.clone();
    let mut jobs = Vec::new();
    for &head in &p.heads {
        for s in 0..p.seeds {
            let l = precision_label(head, s);
            for stage in ["train", "eval", "chain"] {
                ctx.seed(&format!("{l}/{stage}"));
            }
            jobs.push((head, s));
        }
    }
    if ctx.dry_run {
        return Ok(());
    }
    let cfg = ctx.config.clone();
    let oracle = oracle_curve(&cfg, oracle_seed)?;
    let outcomes: Vec<Result<PrecisionCell>> = jobs
        .par_iter()
        .map(|&(head, s)| run_precision_cell(&cfg, head, s).map(|c| c.0))
        .collect();
    let mut cells = Vec::new();
    for (&(head, s), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(c) => cells.push(c),
            Err(e) => ctx.fail(precision_label(head, s), &e),
        }
    }
    write_curves(ctx, &oracle, &cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{ExperimentKind, Preset};

    #[test]
    fn histogram_counts_everything() {
        let d = vec![0.0, 0.0005, 0.002, 0.5, 0.9, 3.0];
        let h = distance_histogram(&d, 1e-3, 1.0, 4).unwrap();
        assert_eq!(h.edges.len(), 7);
        assert_eq!(h.counts.iter().sum::<u64>(), d.len() as u64);
        assert_eq!(h.counts[0], 2);
        assert_eq!(*h.counts.last().unwrap(), 1);
    }

    #[test]
    fn oracle_tracks_chi_survival() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Precision, Preset::Desk).unwrap();
        cfg.eval.samples = 20_000;
        let o = oracle_curve(&cfg, 3).unwrap();
        assert!(o.max_abs_error() < 0.03, "{}", o.max_abs_error());
        // Survival functions are nonincreasing in δ.
        assert!(o.curve.h_hat().windows(2).all(|w| w[1] <= w[0]));
    }
}
