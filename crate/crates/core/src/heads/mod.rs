//! Generative action heads mapping Gaussian latents to actions.
//!
//! Both heads are deterministic compositions of step maps
//! `x_{k+1} = F_k(x_k)`, exposed through [`StepSampler`] so the metrics code
//! can differentiate individual steps as well as the whole sampler.

pub mod diffusion;
pub mod flow;
pub mod gradcheck;
pub mod train;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::predict_batch as mlp_predict;
use crate::nn::MlpParams;
use crate::scalar::Scalar;

pub use diffusion::{cosine_schedule, ddim_sample, ddim_timesteps, DdimSampler, DiffusionHead};
pub use flow::{flow_sample, FlowHead, FlowSampler, Integrator};
pub use train::{DataSource, Dataset, NoisyGrasp, TrainConfig, TrainLog, Trainer};

/// A time-conditioned vector field `(x, t) ↦ f(x, t)` evaluated on a batch
/// of row vectors sharing one time value.
pub trait TimeField<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: ArrayView2<'_, T>, t: T) -> Result<Array2<T>>;
}

impl<T: Scalar> TimeField<T> for MlpParams<T> {
    fn dim(&self) -> usize {
        self.config.data_dim
    }

    fn eval(&self, x: ArrayView2<'_, T>, t: T) -> Result<Array2<T>> {
        mlp_predict(self, x, &[t])
    }
}

/// Adapter turning a closure into a [`TimeField`], for analytic fields.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<T, F> TimeField<T> for FnField<F>
where
    T: Scalar,
    F: Fn(ArrayView2<'_, T>, T) -> Array2<T> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: ArrayView2<'_, T>, t: T) -> Result<Array2<T>> {
        Ok((self.f)(x, t))
    }
}

/// One-step sampler wrapping an explicit batch map `z ↦ a`, for analytic
/// generators and test fixtures.
pub struct MapSampler<F> {
    pub dim: usize,
    pub f: F,
}

impl<T, F> StepSampler<T> for MapSampler<F>
where
    T: Scalar,
    F: Fn(ArrayView2<'_, T>) -> Array2<T> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_steps(&self) -> usize {
        1
    }

    fn step(&self, _k: usize, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let out = (self.f)(x);
        if out.dim() != x.dim() {
            return Err(Error::structural(format!(
                "map returned shape {:?} for input {:?}",
                out.dim(),
                x.dim()
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Flow,
    Diffusion,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Flow => "flow",
            HeadKind::Diffusion => "diffusion",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(HeadKind::Flow),
            "diffusion" => Ok(HeadKind::Diffusion),
            other => Err(Error::config(format!("unknown head kind `{other}` (flow|diffusion)"))),
        }
    }
}

/// Intermediate states of one sampler run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SamplerTrace<T: Scalar> {
    pub latent: Vec<T>,
    /// `states[0] = latent`, `states[K] = action`.
    pub states: Vec<Vec<T>>,
    pub action: Vec<T>,
}

/// Deterministic sampler built from `num_steps()` step maps.
pub trait StepSampler<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    fn num_steps(&self) -> usize;

    /// Applies step map `F_k` to every row of `x`.
    fn step(&self, k: usize, x: ArrayView2<'_, T>) -> Result<Array2<T>>;

    /// Full sampler `G = F_{K−1} ∘ … ∘ F_0` on a batch of latents.
    fn sample(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        check_dim(self.dim(), z.ncols())?;
        let mut x = z.to_owned();
        for k in 0..self.num_steps() {
            x = self.step(k, x.view())?;
            ensure_finite(&x, k)?;
        }
        Ok(x)
    }

    fn trace(&self, z: &[T]) -> Result<SamplerTrace<T>> {
        check_dim(self.dim(), z.len())?;
        let mut states = Vec::with_capacity(self.num_steps() + 1);
        states.push(z.to_vec());
        let mut x = Array2::from_shape_vec((1, z.len()), z.to_vec()).map_err(|e| Error::structural(e.to_string()))?;
        for k in 0..self.num_steps() {
            x = self.step(k, x.view())?;
            ensure_finite(&x, k)?;
            states.push(x.row(0).to_vec());
        }
        let action = x.row(0).to_vec();
        Ok(SamplerTrace {
            latent: z.to_vec(),
            states,
            action,
        })
    }
}

/// Runs a sampler of scalar `U` behind an f64 interface. Latents are rounded
/// to `U` once and the whole trajectory stays in `U`.
pub struct Recast<'a, U: Scalar>(pub &'a dyn StepSampler<U>);

impl<U: Scalar> StepSampler<f64> for Recast<'_, U> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn num_steps(&self) -> usize {
        self.0.num_steps()
    }

    fn step(&self, k: usize, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.0.step(k, x.mapv(U::of).view())?.mapv(U::as_f64))
    }

    fn sample(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.0.sample(z.mapv(U::of).view())?.mapv(U::as_f64))
    }
}

fn check_dim(expect: usize, got: usize) -> Result<()> {
    if expect != got {
        return Err(Error::structural(format!(
            "sampler is {expect}-D, latent has {got} components"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_finite<T: Scalar>(x: &Array2<T>, step: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            step,
            what: "non-finite sampler state".into(),
        });
    }
    Ok(())
}
