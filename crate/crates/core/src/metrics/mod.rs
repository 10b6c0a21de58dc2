//! Monte-Carlo and finite-difference diagnostics of samplers.

pub mod distance;
pub mod jacobian;
pub mod seam;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionClassifier, Classification};
use crate::error::{Error, Result};
use crate::heads::StepSampler;
use crate::rng::{shard_rng, shards, Rng};
use crate::special::{wilson_interval, Z95};

pub use distance::{distance_curve, distances, log_grid, DistanceCurve};
pub use jacobian::{estimate_lipschitz, finite_diff_jacobian, jacobian_chain, JacobianChainReport, LipschitzEstimate};
pub use seam::{seam_map, write_seam_csv, LatentGrid, SeamPoint};

/// Rows of i.i.d. N(0, I) latents drawn in row-major order.
pub fn gaussian_latents(rng: &mut Rng, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal))
}

/// Binomial rate with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub count: u64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl RateEstimate {
    pub fn new(count: u64, n: u64) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(count, n, Z95);
        Self {
            count,
            rate: if n == 0 { 0.0 } else { count as f64 / n as f64 },
            ci_lo,
            ci_hi,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub n: u64,
    pub hallucination: RateEstimate,
    pub modes: Vec<RateEstimate>,
    /// Mode masses restricted to latents with `‖z‖ ≤ radius`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball: Option<BallMasses>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallMasses {
    pub radius: f64,
    pub modes: Vec<RateEstimate>,
}

impl HallucinationReport {
    pub fn from_counts(n: u64, forbidden: u64, mode_counts: &[u64]) -> Self {
        Self {
            n,
            hallucination: RateEstimate::new(forbidden, n),
            modes: mode_counts.iter().map(|&c| RateEstimate::new(c, n)).collect(),
            ball: None,
        }
    }

    pub fn h_hat(&self) -> f64 {
        self.hallucination.rate
    }

    pub fn mode_masses(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.rate).collect()
    }

    /// Number of modes holding more than `threshold` of the samples.
    pub fn modes_covered(&self, threshold: f64) -> usize {
        self.modes.iter().filter(|m| m.rate > threshold).count()
    }

    /// In-ball mode masses, when they were tallied.
    pub fn ball_masses(&self) -> Option<Vec<f64>> {
        self.ball.as_ref().map(|b| b.modes.iter().map(|m| m.rate).collect())
    }
}

/// Classifies a batch of actions into per-mode and forbidden counts.
/// `offset` is the global index of the first row, for error reporting.
pub fn tally<C: ActionClassifier + ?Sized>(
    classifier: &C,
    actions: &Array2<f64>,
    offset: usize,
) -> Result<(u64, Vec<u64>)> {
    let mut forbidden = 0u64;
    let mut modes = vec![0u64; classifier.num_modes()];
    for (i, row) in actions.rows().into_iter().enumerate() {
        let a = row.as_slice().expect("row-major actions");
        match classifier.classify_action(a) {
            Ok(Classification::Forbidden) => forbidden += 1,
            Ok(Classification::Safe(m)) if m < modes.len() => modes[m] += 1,
            Ok(Classification::Safe(m)) => {
                return Err(Error::Sample {
                    index: offset + i,
                    source: Box::new(Error::structural(format!("classifier returned mode {m}"))),
                })
            }
            Err(e) => {
                return Err(Error::Sample {
                    index: offset + i,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok((forbidden, modes))
}

/// Monte-Carlo hallucination rate and mode masses of `sampler` under N(0, I)
/// latents.
///
/// Latents are generated in shards of `batch`; shard `i` draws from
/// `shard_rng(seed, i)`. Shards may run in parallel; counts are merged in
/// shard order, so the report depends only on `(seed, n, batch)`.
pub fn estimate_hallucination<S, C>(
    sampler: &S,
    classifier: &C,
    n: usize,
    batch: usize,
    seed: u64,
) -> Result<HallucinationReport>
where
    S: StepSampler<f64> + ?Sized,
    C: ActionClassifier + ?Sized,
{
    estimate_hallucination_in_ball(sampler, classifier, n, batch, seed, None)
}

/// As [`estimate_hallucination`], additionally tallying mode masses over
/// latents inside the ball of the given radius. The latent stream is the
/// same, so the unrestricted part of the report is unchanged.
pub fn estimate_hallucination_in_ball<S, C>(
    sampler: &S,
    classifier: &C,
    n: usize,
    batch: usize,
    seed: u64,
    radius: Option<f64>,
) -> Result<HallucinationReport>
where
    S: StepSampler<f64> + ?Sized,
    C: ActionClassifier + ?Sized,
{
    if n == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    if classifier.action_dim() != sampler.dim() {
        return Err(Error::structural(format!(
            "sampler emits {}-D actions, classifier expects {}",
            sampler.dim(),
            classifier.action_dim()
        )));
    }
    let layout: Vec<_> = shards(n, batch).collect();
    let parts: Vec<Result<(u64, Vec<u64>, Vec<u64>)>> = layout
        .into_par_iter()
        .map(|(idx, range)| {
            let mut rng = shard_rng(seed, idx as u64);
            let z = gaussian_latents(&mut rng, range.len(), sampler.dim());
            let a = sampler.sample(z.view()).map_err(|e| Error::Sample {
                index: range.start,
                source: Box::new(e),
            })?;
            let (f, m) = tally(classifier, &a, range.start)?;
            let mut inside = vec![0u64; classifier.num_modes()];
            if let Some(r) = radius {
                let r2 = r * r;
                for (zr, ar) in z.rows().into_iter().zip(a.rows()) {
                    if zr.dot(&zr) <= r2 {
                        if let Ok(Classification::Safe(i)) =
                            classifier.classify_action(ar.as_slice().expect("row-major"))
                        {
                            inside[i] += 1;
                        }
                    }
                }
            }
            Ok((f, m, inside))
        })
        .collect();
    let mut forbidden = 0;
    let mut modes = vec![0u64; classifier.num_modes()];
    let mut inside = vec![0u64; classifier.num_modes()];
    for p in parts {
        let (f, m, b) = p?;
        forbidden += f;
        modes.iter_mut().zip(m).for_each(|(a, b)| *a += b);
        inside.iter_mut().zip(b).for_each(|(a, b)| *a += b);
    }
    let mut rep = HallucinationReport::from_counts(n as u64, forbidden, &modes);
    rep.ball = radius.map(|radius| BallMasses {
        radius,
        modes: inside.iter().map(|&c| RateEstimate::new(c, n as u64)).collect(),
    });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::BandGeometry;
    use crate::heads::MapSampler;
    use crate::special::std_normal_cdf;
    use ndarray::ArrayView2;

    fn band() -> BandGeometry {
        // Wide x-range so only the y coordinate decides.
        BandGeometry::new(2, 0.5, 0.25, -1e6, 1e6, 1e6).unwrap()
    }

    #[test]
    fn identity_sampler_matches_gaussian_strip_mass() {
        let g = band();
        let id = MapSampler {
            dim: 2,
            f: |z: ArrayView2<'_, f64>| z.to_owned(),
        };
        let n = 400_000;
        let rep = estimate_hallucination(&id, &g, n, 4096, 7).unwrap();
        // Strips: centers ±0.75, half-width 0.5 → y ∈ [0.25, 1.25] and its mirror.
        let strip = std_normal_cdf(1.25) - std_normal_cdf(0.25);
        let h = 1.0 - 2.0 * strip;
        let se = (h * (1.0 - h) / n as f64).sqrt();
        assert!((rep.h_hat() - h).abs() < 3.0 * se, "{} vs {h}", rep.h_hat());
        let total: u64 = rep.hallucination.count + rep.modes.iter().map(|m| m.count).sum::<u64>();
        assert_eq!(total, n as u64);
    }

    #[test]
    fn ball_masses_match_disc_probability() {
        let g = band();
        let id = MapSampler {
            dim: 2,
            f: |z: ArrayView2<'_, f64>| z.to_owned(),
        };
        let plain = estimate_hallucination(&id, &g, 100_000, 4096, 8).unwrap();
        let rep = estimate_hallucination_in_ball(&id, &g, 100_000, 4096, 8, Some(1e3)).unwrap();
        assert_eq!(rep.hallucination, plain.hallucination);
        assert_eq!(rep.ball_masses().unwrap(), plain.mode_masses());
        // A ball that misses both strips (|y| < 0.25) holds no mode mass.
        let rep = estimate_hallucination_in_ball(&id, &g, 20_000, 4096, 8, Some(0.2)).unwrap();
        assert!(rep.ball_masses().unwrap().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn constant_samplers() {
        let g = band();
        let safe = MapSampler {
            dim: 2,
            f: |z: ArrayView2<'_, f64>| Array2::from_shape_fn(z.dim(), |(_, j)| [0.0, 0.75][j]),
        };
        let rep = estimate_hallucination(&safe, &g, 10_000, 999, 1).unwrap();
        assert_eq!(rep.h_hat(), 0.0);
        assert_eq!(rep.mode_masses(), vec![0.0, 1.0]);
        let gap = MapSampler {
            dim: 2,
            f: |z: ArrayView2<'_, f64>| Array2::zeros(z.dim()),
        };
        let rep = estimate_hallucination(&gap, &g, 10_000, 999, 1).unwrap();
        assert_eq!(rep.h_hat(), 1.0);
    }

    #[test]
    fn independent_of_thread_count() {
        let g = band();
        let id = MapSampler {
            dim: 2,
            f: |z: ArrayView2<'_, f64>| z.to_owned(),
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = pool.install(|| estimate_hallucination(&id, &g, 50_000, 1000, 3).unwrap());
        let b = estimate_hallucination(&id, &g, 50_000, 1000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn classifier_error_carries_index() {
        let bad = MapSampler {
            dim: 2,
            f: |z: ArrayView2<'_, f64>| z.to_owned(),
        };
        struct Picky;
        impl ActionClassifier for Picky {
            fn action_dim(&self) -> usize {
                2
            }
            fn num_modes(&self) -> usize {
                1
            }
            fn classify_action(&self, a: &[f64]) -> Result<Classification> {
                if a[0] > 3.0 {
                    Err(Error::domain("too far"))
                } else {
                    Ok(Classification::Safe(0))
                }
            }
        }
        match estimate_hallucination(&bad, &Picky, 100_000, 4096, 0) {
            Err(Error::Sample { index, .. }) => assert!(index < 100_000),
            other => panic!("unexpected {other:?}"),
        }
    }
}
