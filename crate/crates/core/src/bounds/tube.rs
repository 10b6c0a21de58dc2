use std::f64::consts::PI;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{GraspManifold, Manifold};
use crate::error::{Error, Result};
use crate::rng::{shard_rng, shards, Rng};
use crate::special::{wilson_interval, Z95};

/// Sampling region with known volume, used as the hit-or-miss envelope.
pub trait Region: Sync {
    fn dim(&self) -> usize;
    fn volume(&self) -> f64;
    /// Writes one uniform point of the region into `out`.
    fn sample(&self, rng: &mut Rng, out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(b >= a)) {
            return Err(Error::domain("box needs matching corners with lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    /// `[−h, h]^dim`
    pub fn cube(dim: usize, h: f64) -> Result<Self> {
        Self::new(vec![-h; dim], vec![h; dim])
    }
}

impl Region for AxisBox {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    fn sample(&self, rng: &mut Rng, out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(&self.lo).zip(&self.hi) {
            *o = a + (b - a) * rng.random::<f64>();
        }
    }
}

/// Envelope of the δ-tube around the grasp manifold.
///
/// An axis box wastes almost every sample because the yaw vector is tied to
/// the ring angle. This region takes the planar position in the annulus
/// `|ρ − r| ≤ δ`, the height in `[h_min − δ, h_max + δ]`, roll and pitch in
/// `[−δ, δ]`, and the yaw vector in the annular sector of radii `1 ± δ`
/// whose angle lies within `asin(δ/r) + asin(δ)` of the yaw implied by the
/// planar angle. Every point within δ of the manifold satisfies all four
/// conditions, and the sector area does not depend on the planar angle, so
/// the volume is a plain product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspTubeRegion {
    pub manifold: GraspManifold,
    pub delta: f64,
    half_angle: f64,
}

impl GraspTubeRegion {
    pub fn new(manifold: GraspManifold, delta: f64) -> Result<Self> {
        manifold.validate()?;
        if !(delta >= 0.0 && delta < manifold.ring_radius.min(1.0)) {
            return Err(Error::domain(format!(
                "tube envelope needs 0 <= δ < min(r, 1), got δ = {delta}"
            )));
        }
        let half_angle = ((delta / manifold.ring_radius).asin() + delta.asin()).min(PI);
        Ok(Self {
            manifold,
            delta,
            half_angle,
        })
    }
}

/// Radius with density ∝ ρ on `[a, b]`.
fn annulus_radius(rng: &mut Rng, a: f64, b: f64) -> f64 {
    (a * a + (b * b - a * a) * rng.random::<f64>()).sqrt()
}

impl Region for GraspTubeRegion {
    fn dim(&self) -> usize {
        7
    }

    fn volume(&self) -> f64 {
        let (r, d) = (self.manifold.ring_radius, self.delta);
        let planar = 4.0 * PI * r * d;
        let height = self.manifold.h_max - self.manifold.h_min + 2.0 * d;
        let tilt = 4.0 * d * d;
        let yaw = self.half_angle * 4.0 * d;
        planar * height * tilt * yaw
    }

    fn sample(&self, rng: &mut Rng, out: &mut [f64]) {
        let (r, d) = (self.manifold.ring_radius, self.delta);
        let rho = annulus_radius(rng, r - d, r + d);
        let phi = 2.0 * PI * rng.random::<f64>();
        out[0] = rho * phi.cos();
        out[1] = rho * phi.sin();
        out[2] = self.manifold.h_min - d + (self.manifold.h_max - self.manifold.h_min + 2.0 * d) * rng.random::<f64>();
        out[3] = d * (2.0 * rng.random::<f64>() - 1.0);
        out[4] = d * (2.0 * rng.random::<f64>() - 1.0);
        let yaw = crate::envs::yaw_of(phi) + self.half_angle * (2.0 * rng.random::<f64>() - 1.0);
        let ry = annulus_radius(rng, 1.0 - d, 1.0 + d);
        out[5] = ry * yaw.sin();
        out[6] = ry * yaw.cos();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeVolume {
    pub delta: f64,
    pub n: u64,
    pub hits: u64,
    pub region_volume: f64,
    pub volume: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl TubeVolume {
    /// Binomial standard error of the volume estimate.
    pub fn se(&self) -> f64 {
        let p = self.hits as f64 / self.n as f64;
        self.region_volume * (p * (1.0 - p) / self.n as f64).sqrt()
    }
}

const TUBE_SHARD: usize = 8192;

/// Hit-or-miss estimate of `vol{a : dist(a, 𝓜) ≤ δ}` over `region`, which
/// must contain the tube.
pub fn tube_volume_mc<M, R>(manifold: &M, delta: f64, region: &R, n: usize, seed: u64) -> Result<TubeVolume>
where
    M: Manifold + ?Sized,
    R: Region + ?Sized,
{
    if region.dim() != manifold.ambient_dim() {
        return Err(Error::structural(format!(
            "region is {}-D, manifold lives in {}-D",
            region.dim(),
            manifold.ambient_dim()
        )));
    }
    if n == 0 {
        return Err(Error::config("tube volume needs at least one sample"));
    }
    let layout: Vec<_> = shards(n, TUBE_SHARD).collect();
    let parts: Vec<Result<u64>> = layout
        .into_par_iter()
        .map(|(idx, range)| {
            let mut rng = shard_rng(seed, idx as u64);
            let mut a = vec![0.0; region.dim()];
            let mut hits = 0u64;
            for _ in range {
                region.sample(&mut rng, &mut a);
                if manifold.distance_to(&a)?.0 <= delta {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect();
    let mut hits = 0;
    for p in parts {
        hits += p?;
    }
    let vol = region.volume();
    let (lo, hi) = wilson_interval(hits, n as u64, Z95);
    Ok(TubeVolume {
        delta,
        n: n as u64,
        hits,
        region_volume: vol,
        volume: vol * hits as f64 / n as f64,
        ci_lo: vol * lo,
        ci_hi: vol * hi,
    })
}

/// Least-squares line `ln V = ln C + s ln δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeFit {
    pub slope: f64,
    pub log_constant: f64,
    /// Fitted `C_M` with the slope left free.
    pub constant: f64,
    /// Geometric mean of `V / δ^{d−k}`: `C_M` with the slope pinned to the codimension.
    pub constant_at_codim: f64,
    pub expected_slope: f64,
    /// The slope is within 0.2 of the codimension; larger departures signal
    /// that δ is outside the tube regime.
    pub in_regime: bool,
}

pub fn loglog_fit(estimates: &[TubeVolume], codim: usize) -> Result<TubeFit> {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.delta > 0.0 && e.volume > 0.0)
        .map(|e| (e.delta.ln(), e.volume.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::domain(
            "log-log fit needs two estimates with positive δ and volume",
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("log-log fit needs distinct δ values"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let log_constant = my - slope * mx;
    let expected = codim as f64;
    let constant_at_codim = (pts.iter().map(|p| p.1 - expected * p.0).sum::<f64>() / n).exp();
    Ok(TubeFit {
        slope,
        log_constant,
        constant: log_constant.exp(),
        constant_at_codim,
        expected_slope: expected,
        in_regime: (slope - expected).abs() <= 0.2,
    })
}
