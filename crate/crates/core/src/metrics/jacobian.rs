use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::StepSampler;
use crate::linalg::svd_small;
use crate::rng::rng_from_seed;

/// Central-difference Jacobian of a batch map at `x`, shape `(out_dim, x.len())`.
///
/// All `2n` perturbed points are evaluated in one batch call.
pub fn finite_diff_jacobian<F>(f: F, x: &[f64], h: f64) -> Result<Array2<f64>>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let n = x.len();
    let mut pts = Array2::zeros((2 * n, n));
    for i in 0..n {
        pts.row_mut(2 * i).assign(&ndarray::aview1(x));
        pts.row_mut(2 * i + 1).assign(&ndarray::aview1(x));
        pts[[2 * i, i]] += h;
        pts[[2 * i + 1, i]] -= h;
    }
    let vals = f(pts.view())?;
    if vals.nrows() != 2 * n {
        return Err(Error::structural(format!(
            "map returned {} rows for {} inputs",
            vals.nrows(),
            2 * n
        )));
    }
    let m = vals.ncols();
    let mut jac = Array2::zeros((m, n));
    for i in 0..n {
        let (p, q) = (vals.row(2 * i), vals.row(2 * i + 1));
        if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite evaluation when perturbing coordinate {i}"
            )));
        }
        for r in 0..m {
            jac[[r, i]] = (p[r] - q[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub radius: f64,
    pub probes: usize,
    pub h: f64,
    /// σ_max of the finite-difference Jacobian at each evaluated probe.
    pub sigma_max: Vec<f64>,
    /// Probes where the sampler failed.
    pub skipped: usize,
    /// L̂ = max over probes.
    pub max: f64,
    /// (level, value) pairs, nearest-rank.
    pub quantiles: Vec<(f64, f64)>,
}

pub const LIPSCHITZ_QUANTILES: [f64; 3] = [0.5, 0.9, 0.99];

/// Draws `probes` latents from N(0, I) conditioned on ‖z‖ ≤ `radius` (exact
/// rejection sampling).
pub fn ball_probes(dim: usize, radius: f64, probes: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    let mut out = Array2::zeros((probes, dim));
    let mut row = vec![0.0; dim];
    for mut r in out.rows_mut() {
        loop {
            row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            if row.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                break;
            }
        }
        r.assign(&ndarray::aview1(&row));
    }
    out
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

const PROBE_CHUNK: usize = 128;

/// Local Lipschitz proxy: largest singular value of the central-difference
/// Jacobian of the full sampler at probes drawn in `B_R`.
pub fn estimate_lipschitz<S: StepSampler<f64> + ?Sized>(
    sampler: &S,
    radius: f64,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if probes == 0 {
        return Err(Error::config("need at least one probe"));
    }
    if !(h > 0.0 && radius > 0.0) {
        return Err(Error::config("probe radius and step must be positive"));
    }
    let d = sampler.dim();
    let z = ball_probes(d, radius, probes, seed);
    let per_probe = |p: &[f64]| -> Result<f64> {
        let j = finite_diff_jacobian(|b| sampler.sample(b), p, h)?;
        Ok(svd_small(j.view())?[0])
    };
    let chunks: Vec<usize> = (0..probes.div_ceil(PROBE_CHUNK)).collect();
    let parts: Vec<Vec<Option<f64>>> = chunks
        .into_par_iter()
        .map(|c| {
            let rows = c * PROBE_CHUNK..((c + 1) * PROBE_CHUNK).min(probes);
            // One batched call for the whole chunk; fall back to per-probe
            // evaluation so a failure only drops the offending probe.
            let mut pts = Array2::zeros((2 * d * rows.len(), d));
            for (k, r) in rows.clone().enumerate() {
                for i in 0..d {
                    for (s, sign) in [(0, 1.0), (1, -1.0)] {
                        let mut row = pts.row_mut(2 * d * k + 2 * i + s);
                        row.assign(&z.row(r));
                        row[i] += sign * h;
                    }
                }
            }
            let batched = sampler
                .sample(pts.view())
                .ok()
                .filter(|v| v.iter().all(|x| x.is_finite()));
            rows.clone()
                .enumerate()
                .map(|(k, r)| match &batched {
                    Some(vals) => {
                        let mut jac = Array2::zeros((d, d));
                        for i in 0..d {
                            for o in 0..d {
                                jac[[o, i]] =
                                    (vals[[2 * d * k + 2 * i, o]] - vals[[2 * d * k + 2 * i + 1, o]]) / (2.0 * h);
                            }
                        }
                        svd_small(jac.view()).ok().map(|s| s[0])
                    }
                    None => per_probe(z.row(r).as_slice().expect("row-major")).ok(),
                })
                .collect()
        })
        .collect();
    let all: Vec<Option<f64>> = parts.into_iter().flatten().collect();
    let skipped = all.iter().filter(|v| v.is_none()).count();
    let sigma_max: Vec<f64> = all.into_iter().flatten().collect();
    let mut sorted = sigma_max.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite singular values"));
    let max = sorted.last().copied().unwrap_or(0.0);
    Ok(LipschitzEstimate {
        radius,
        probes,
        h,
        quantiles: LIPSCHITZ_QUANTILES
            .iter()
            .map(|&q| (q, nearest_rank(&sorted, q)))
            .collect(),
        sigma_max,
        skipped,
        max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianChainReport {
    pub steps: usize,
    pub step_sigma_min: Vec<f64>,
    pub step_sigma_max: Vec<f64>,
    pub global_sigma_min: f64,
    pub global_sigma_max: f64,
    /// exp(mean ln σ_min(J_k)).
    pub geometric_mean_sigma_min: f64,
    /// Π σ_min(J_k), the lower bound on σ_min(J_global).
    pub product_sigma_min: f64,
}

/// Per-step and global Jacobian conditioning along the trajectory from `z`.
pub fn jacobian_chain<S: StepSampler<f64> + ?Sized>(sampler: &S, z: &[f64], h: f64) -> Result<JacobianChainReport> {
    let trace = sampler.trace(z)?;
    let k = sampler.num_steps();
    let d = sampler.dim();
    let mut global = Array2::<f64>::eye(d);
    let mut smin = Vec::with_capacity(k);
    let mut smax = Vec::with_capacity(k);
    for step in 0..k {
        let j = finite_diff_jacobian(|b| sampler.step(step, b), &trace.states[step], h)?;
        let sv = svd_small(j.view())?;
        smax.push(sv[0]);
        smin.push(*sv.last().expect("nonempty"));
        global = j.dot(&global);
    }
    let gsv = svd_small(global.view())?;
    let geo = if smin.iter().any(|&s| s <= 0.0) {
        0.0
    } else {
        (smin.iter().map(|s| s.ln()).sum::<f64>() / k as f64).exp()
    };
    Ok(JacobianChainReport {
        steps: k,
        product_sigma_min: smin.iter().product(),
        step_sigma_min: smin,
        step_sigma_max: smax,
        global_sigma_min: *gsv.last().expect("nonempty"),
        global_sigma_max: gsv[0],
        geometric_mean_sigma_min: geo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{MapSampler, StepSampler};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    /// Sampler applying a fixed matrix per step: x ↦ x·A_kᵀ.
    struct Affine {
        mats: Vec<Array2<f64>>,
        shift: f64,
    }

    impl StepSampler<f64> for Affine {
        fn dim(&self) -> usize {
            self.mats[0].nrows()
        }
        fn num_steps(&self) -> usize {
            self.mats.len()
        }
        fn step(&self, k: usize, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
            Ok(x.dot(&self.mats[k].t()) + self.shift)
        }
    }

    #[test]
    fn identity_and_quadratic() {
        let j = finite_diff_jacobian(|b| Ok(b.to_owned()), &[1.0, -2.0, 0.5], 1e-3).unwrap();
        for ((r, c), v) in j.indexed_iter() {
            assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        let sq = |b: ArrayView2<'_, f64>| {
            Ok(Array2::from_shape_fn(b.dim(), |(i, k)| {
                if k == 0 {
                    b[[i, 0]].powi(2)
                } else {
                    b[[i, 1]]
                }
            }))
        };
        let h = 1e-4;
        let j = finite_diff_jacobian(sq, &[3.0, 5.0], h).unwrap();
        // Central differences are exact on quadratics up to rounding.
        assert!((j[[0, 0]] - 6.0).abs() < 1e-8 && j[[0, 1]].abs() < 1e-12);
        assert!(j[[1, 0]].abs() < 1e-12 && (j[[1, 1]] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn affine_is_exact() {
        let a = array![[2.0, -1.0, 0.5], [0.3, 0.0, 4.0]];
        let f = |b: ArrayView2<'_, f64>| Ok(b.dot(&a.t()) + 1.5);
        let j = finite_diff_jacobian(f, &[0.2, 0.7, -3.0], 0.01).unwrap();
        for (x, y) in j.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_names_coordinate() {
        let f = |b: ArrayView2<'_, f64>| Ok(b.mapv(|v| if v > 1.0 { f64::NAN } else { v }));
        match finite_diff_jacobian(f, &[0.0, 1.0], 0.1) {
            Err(Error::Numerical(m)) => assert!(m.contains("coordinate 1"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lipschitz_of_linear_maps() {
        let a = array![[1.0, 2.0], [0.0, -1.5]];
        let at = a.t().to_owned();
        let lin = MapSampler {
            dim: 2,
            f: move |z: ArrayView2<'_, f64>| z.dot(&at),
        };
        // σ_max of [[1,2],[0,−1.5]] from the 2×2 closed form.
        let (p, q) = (
            a.iter().map(|v| v * v).sum::<f64>(),
            a[[0, 0]] * a[[1, 1]] - a[[0, 1]] * a[[1, 0]],
        );
        let smax = ((p + (p * p - 4.0 * q * q).sqrt()) / 2.0).sqrt();
        let est = estimate_lipschitz(&lin, 3.0, 300, 0.01, 5).unwrap();
        assert_eq!(est.sigma_max.len(), 300);
        assert!(est.sigma_max.iter().all(|s| (s - smax).abs() < 1e-6));
        assert!(est.quantiles.iter().all(|&(_, v)| v <= est.max));

        let scalar = MapSampler {
            dim: 1,
            f: |z: ArrayView2<'_, f64>| z.mapv(|v| -2.5 * v),
        };
        assert!((estimate_lipschitz(&scalar, 3.0, 64, 0.01, 1).unwrap().max - 2.5).abs() < 1e-8);

        let constant = MapSampler {
            dim: 2,
            f: |z: ArrayView2<'_, f64>| Array2::from_elem(z.dim(), 0.4),
        };
        assert_eq!(estimate_lipschitz(&constant, 3.0, 64, 0.01, 1).unwrap().max, 0.0);
    }

    #[test]
    fn failing_probes_are_skipped() {
        // NaN whenever the first latent coordinate exceeds 1.
        let f = MapSampler {
            dim: 2,
            f: |z: ArrayView2<'_, f64>| {
                z.to_owned() * Array2::from_shape_fn(z.dim(), |(i, _)| if z[[i, 0]] > 1.0 { f64::NAN } else { 1.0 })
            },
        };
        let est = estimate_lipschitz(&f, 3.0, 500, 0.01, 2).unwrap();
        assert!(est.skipped > 0 && est.skipped < 500);
        assert_eq!(est.skipped + est.sigma_max.len(), 500);
        assert!(est.sigma_max.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn probes_stay_in_ball() {
        let z = ball_probes(3, 1.0, 2000, 4);
        assert!(z.rows().into_iter().all(|r| r.dot(&r) <= 1.0));
    }

    #[test]
    fn chain_examples() {
        let id = Affine {
            mats: vec![Array2::eye(3); 4],
            shift: 0.0,
        };
        let r = jacobian_chain(&id, &[0.1, 0.2, 0.3], 1e-3).unwrap();
        assert!(r.step_sigma_min.iter().all(|s| (s - 1.0).abs() < 1e-10));
        assert!((r.geometric_mean_sigma_min - 1.0).abs() < 1e-10);

        let scal = Affine {
            mats: vec![array![[0.5]], array![[0.2]]],
            shift: 0.3,
        };
        let r = jacobian_chain(&scal, &[1.0], 1e-3).unwrap();
        assert!((r.step_sigma_min[0] - 0.5).abs() < 1e-10 && (r.step_sigma_min[1] - 0.2).abs() < 1e-10);
        assert!((r.global_sigma_min - 0.1).abs() < 1e-10);
        assert!((r.geometric_mean_sigma_min - 0.1f64.sqrt()).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn product_inequality(entries in proptest::collection::vec(-2.0f64..2.0, 3 * 9)) {
            let mats: Vec<Array2<f64>> = entries
                .chunks(9)
                .map(|c| Array2::from_shape_vec((3, 3), c.to_vec()).unwrap())
                .collect();
            let chain = Affine { mats: mats.clone(), shift: 0.0 };
            let r = jacobian_chain(&chain, &[0.3, -0.1, 0.8], 1e-3).unwrap();
            prop_assert!(r.global_sigma_min >= r.product_sigma_min - 1e-9);
            // Per-step values agree with the SVD of the exact matrices.
            for (m, s) in mats.iter().zip(&r.step_sigma_min) {
                let exact = *svd_small(m.view()).unwrap().last().unwrap();
                prop_assert!((exact - s).abs() < 1e-9);
            }
        }
    }
}
