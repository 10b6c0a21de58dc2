use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::RateEstimate;
use crate::envs::Manifold;
use crate::error::{Error, Result};

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || points == 0 {
        return Err(Error::config(format!(
            "log grid needs 0 < lo <= hi and at least one point (got {lo}, {hi}, {points})"
        )));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == points {
                hi
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}

/// Empirical `H(δ) = P(dist(a, 𝓜) > δ)` on a log grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCurve {
    pub n: u64,
    pub deltas: Vec<f64>,
    pub rates: Vec<RateEstimate>,
    /// Samples whose projection was degenerate (distance still exact).
    pub degenerate: u64,
    /// (level, distance) pairs of the raw distance sample.
    pub distance_quantiles: Vec<(f64, f64)>,
}

pub const DISTANCE_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

impl DistanceCurve {
    pub fn h_hat(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r.rate).collect()
    }

    /// CSV with columns `delta,H_hat,ci_lo,ci_hi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["delta", "H_hat", "ci_lo", "ci_hi"])?;
        for (d, r) in self.deltas.iter().zip(&self.rates) {
            wr.write_record([
                d.to_string(),
                r.rate.to_string(),
                r.ci_lo.to_string(),
                r.ci_hi.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Sorted distances of each sample row to the manifold, plus the degenerate count.
pub fn distances<M: Manifold + ?Sized>(samples: ArrayView2<'_, f64>, manifold: &M) -> Result<(Vec<f64>, u64)> {
    let mut out = Vec::with_capacity(samples.nrows());
    let mut degenerate = 0;
    for (i, row) in samples.rows().into_iter().enumerate() {
        let a = row.to_vec();
        let (d, deg) = manifold.distance_to(&a).map_err(|e| Error::Sample {
            index: i,
            source: Box::new(e),
        })?;
        degenerate += u64::from(deg);
        out.push(d);
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Ok((out, degenerate))
}

pub fn distance_curve<M: Manifold + ?Sized>(
    samples: ArrayView2<'_, f64>,
    manifold: &M,
    delta_min: f64,
    delta_max: f64,
    points: usize,
) -> Result<DistanceCurve> {
    let deltas = log_grid(delta_min, delta_max, points)?;
    if samples.ncols() != manifold.ambient_dim() {
        return Err(Error::structural(format!(
            "samples are {}-D, manifold lives in {}-D",
            samples.ncols(),
            manifold.ambient_dim()
        )));
    }
    let (dist, degenerate) = distances(samples, manifold)?;
    let n = dist.len() as u64;
    let rates = deltas
        .iter()
        .map(|&d| {
            // Count of distances strictly above d.
            let above = dist.len() - dist.partition_point(|&x| x <= d);
            RateEstimate::new(above as u64, n)
        })
        .collect();
    let distance_quantiles = DISTANCE_QUANTILES
        .iter()
        .map(|&q| {
            let v = if dist.is_empty() {
                0.0
            } else {
                let k = ((q * dist.len() as f64).ceil() as usize).clamp(1, dist.len());
                dist[k - 1]
            };
            (q, v)
        })
        .collect();
    Ok(DistanceCurve {
        n,
        deltas,
        rates,
        degenerate,
        distance_quantiles,
    })
}
