use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{SamplerTrace, StepSampler, TimeField};
use crate::error::{Error, Result};
use crate::nn::{Ema, MlpParams};
use crate::scalar::Scalar;

pub const COSINE_OFFSET: f64 = 0.008;
pub const ALPHA_BAR_FLOOR: f64 = 1e-5;
pub const DEFAULT_T_DIFF: usize = 200;
pub const DEFAULT_DDIM_STEPS: usize = 50;

/// Cumulative signal levels ᾱ_0..ᾱ_T of the cosine schedule, clipped to
/// `[ALPHA_BAR_FLOOR, 1]`.
///
/// Strictly decreasing as long as only ᾱ_T reaches the floor, which holds for
/// `T ≤ 450`; longer schedules flatten at the floor.
pub fn cosine_schedule(t_diff: usize) -> Result<Vec<f64>> {
    if t_diff == 0 {
        return Err(Error::config("diffusion needs at least one timestep"));
    }
    let s = COSINE_OFFSET;
    let f = |t: usize| {
        let u = (t as f64 / t_diff as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
        u.cos().powi(2)
    };
    let f0 = f(0);
    Ok((0..=t_diff).map(|t| (f(t) / f0).clamp(ALPHA_BAR_FLOOR, 1.0)).collect())
}

/// K + 1 evenly spaced timesteps from `t_diff` down to 0, strictly decreasing.
pub fn ddim_timesteps(t_diff: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > t_diff {
        return Err(Error::config(format!(
            "DDIM step count must lie in 1..={t_diff}, got {k}"
        )));
    }
    // Spacing T/K ≥ 1 keeps rounded values strictly decreasing.
    Ok((0..=k)
        .map(|i| (t_diff as f64 * (k - i) as f64 / k as f64).round() as usize)
        .collect())
}

/// v-prediction diffusion head sampled with deterministic DDIM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DiffusionHead<T: Scalar> {
    pub net: MlpParams<T>,
    pub ema: Option<Ema<T>>,
    pub t_diff: usize,
    pub alpha_bar: Vec<f64>,
    pub ddim_steps: usize,
    /// Sample with the EMA weights when present.
    pub use_ema: bool,
}

impl<T: Scalar> DiffusionHead<T> {
    pub fn new(net: MlpParams<T>, t_diff: usize, ddim_steps: usize) -> Result<Self> {
        let alpha_bar = cosine_schedule(t_diff)?;
        ddim_timesteps(t_diff, ddim_steps)?;
        Ok(Self {
            net,
            ema: None,
            t_diff,
            alpha_bar,
            ddim_steps,
            use_ema: true,
        })
    }

    /// Weights used for sampling.
    pub fn eval_params(&self) -> &MlpParams<T> {
        match (&self.ema, self.use_ema) {
            (Some(e), true) => &e.shadow,
            _ => &self.net,
        }
    }

    pub fn sampler(&self) -> Result<DdimSampler<'_, MlpParams<T>>> {
        self.sampler_with_steps(self.ddim_steps)
    }

    pub fn sampler_with_steps(&self, k: usize) -> Result<DdimSampler<'_, MlpParams<T>>> {
        DdimSampler::new(self.eval_params(), &self.alpha_bar, k)
    }
}

/// DDIM (η = 0) over an arbitrary v-prediction field. The field receives
/// time as `t / T`.
#[derive(Debug, Clone)]
pub struct DdimSampler<'a, F> {
    pub field: &'a F,
    pub alpha_bar: &'a [f64],
    pub timesteps: Vec<usize>,
}

/// Clean-sample and noise estimates at one DDIM step.
#[derive(Debug, Clone)]
pub struct DdimReconstruction<T> {
    pub x0_hat: Array2<T>,
    pub eps_hat: Array2<T>,
    pub alpha_bar: f64,
}

impl<'a, F> DdimSampler<'a, F> {
    pub fn new(field: &'a F, alpha_bar: &'a [f64], k: usize) -> Result<Self> {
        let t_diff = alpha_bar.len().saturating_sub(1);
        let timesteps = ddim_timesteps(t_diff, k)?;
        Ok(Self {
            field,
            alpha_bar,
            timesteps,
        })
    }

    fn t_diff(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    /// x̂_0 and ε̂ from the state at the start of step `k`.
    pub fn reconstruct<T: Scalar>(&self, k: usize, x: ArrayView2<'_, T>) -> Result<DdimReconstruction<T>>
    where
        F: TimeField<T>,
    {
        let t = *self
            .timesteps
            .get(k)
            .filter(|_| k + 1 < self.timesteps.len())
            .ok_or_else(|| Error::structural(format!("DDIM step {k} out of range")))?;
        let ab = self.alpha_bar[t];
        let v = self.field.eval(x, T::of(t as f64 / self.t_diff() as f64))?;
        let sa = T::of(ab.sqrt());
        let sb = T::of((1.0 - ab).sqrt());
        let x0_hat = &x * sa - &v * sb;
        let eps_hat = &x * sb + &v * sa;
        Ok(DdimReconstruction {
            x0_hat,
            eps_hat,
            alpha_bar: ab,
        })
    }
}

impl<T: Scalar, F: TimeField<T>> StepSampler<T> for DdimSampler<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn num_steps(&self) -> usize {
        self.timesteps.len() - 1
    }

    fn step(&self, k: usize, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let r = self.reconstruct(k, x)?;
        let ab = self.alpha_bar[self.timesteps[k + 1]];
        Ok(r.x0_hat * T::of(ab.sqrt()) + r.eps_hat * T::of((1.0 - ab).sqrt()))
    }
}

pub fn ddim_sample<T: Scalar>(head: &DiffusionHead<T>, z: &[T], k: usize) -> Result<(Vec<T>, SamplerTrace<T>)> {
    let tr = head.sampler_with_steps(k)?.trace(z)?;
    Ok((tr.action.clone(), tr))
}
