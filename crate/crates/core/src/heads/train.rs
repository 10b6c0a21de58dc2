use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::diffusion::{cosine_schedule, DEFAULT_DDIM_STEPS, DEFAULT_T_DIFF};
use super::{DiffusionHead, FlowHead, HeadKind, Integrator};
use crate::envs::{BandGeometry, GraspManifold};
use crate::error::{Error, Result};
use crate::nn::{backward, forward_batch, AdamW, AdamWConfig, Ema, MlpGrads, MlpParams};
use crate::scalar::Scalar;

/// Source of i.i.d. training actions.
pub trait DataSource {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Array2<f64>>;
}

impl DataSource for BandGeometry {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Array2<f64>> {
        Ok(self.sample_training(n, rng))
    }
}

/// Grasp manifold with additive Gaussian noise of standard deviation `noise_sigma`.
#[derive(Debug, Clone, Copy)]
pub struct NoisyGrasp {
    pub manifold: GraspManifold,
    pub noise_sigma: f64,
}

impl DataSource for NoisyGrasp {
    fn dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Array2<f64>> {
        self.manifold.sample_training(self.noise_sigma, n, rng)
    }
}

/// Fixed data set resampled uniformly with replacement.
#[derive(Debug, Clone)]
pub struct Dataset(pub Array2<f64>);

impl DataSource for Dataset {
    fn dim(&self) -> usize {
        self.0.ncols()
    }

    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Array2<f64>> {
        let rows = self.0.nrows();
        if rows == 0 {
            return Err(Error::config("empty data set"));
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..rows)).collect();
        Ok(self.0.select(Axis(0), &idx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub optim: AdamWConfig,
    pub ema_decay: f64,
    pub t_diff: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 512,
            optim: AdamWConfig::default(),
            ema_decay: 0.999,
            t_diff: DEFAULT_T_DIFF,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Minibatch loss before each update.
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean loss over the half-open step window `[from, to)`.
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let w = &self.losses[from.min(self.losses.len())..to.min(self.losses.len())];
        w.iter().sum::<f64>() / w.len().max(1) as f64
    }
}

/// Shared training state for both heads. Training is single-threaded; the
/// caller's generator fully determines the run.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub kind: HeadKind,
    pub params: MlpParams<T>,
    pub opt: AdamW<T>,
    pub ema: Ema<T>,
    pub config: TrainConfig,
    alpha_bar: Vec<f64>,
    pub log: TrainLog,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(kind: HeadKind, params: MlpParams<T>, config: TrainConfig) -> Result<Self> {
        if config.batch == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let opt = AdamW::new(config.optim, params.len())?;
        let ema = Ema::new(&params, config.ema_decay)?;
        let alpha_bar = match kind {
            HeadKind::Flow => Vec::new(),
            HeadKind::Diffusion => cosine_schedule(config.t_diff)?,
        };
        Ok(Self {
            kind,
            params,
            opt,
            ema,
            config,
            alpha_bar,
            log: TrainLog::default(),
        })
    }

    /// Builds network inputs, per-row times and regression targets for a
    /// minibatch of clean actions.
    pub fn make_batch(&self, x0: ArrayView2<'_, f64>, rng: &mut dyn rand::RngCore) -> (Array2<T>, Vec<T>, Array2<T>) {
        let (b, d) = x0.dim();
        let mut input = Array2::zeros((b, d));
        let mut target = Array2::zeros((b, d));
        let mut times = Vec::with_capacity(b);
        for i in 0..b {
            match self.kind {
                HeadKind::Flow => {
                    let t: f64 = rng.random();
                    for j in 0..d {
                        let x1: f64 = rng.sample(StandardNormal);
                        input[[i, j]] = T::of((1.0 - t) * x0[[i, j]] + t * x1);
                        target[[i, j]] = T::of(x1 - x0[[i, j]]);
                    }
                    times.push(T::of(t));
                }
                HeadKind::Diffusion => {
                    let tt = self.alpha_bar.len() - 1;
                    let t = rng.random_range(1..=tt);
                    let ab = self.alpha_bar[t];
                    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
                    for j in 0..d {
                        let e: f64 = rng.sample(StandardNormal);
                        input[[i, j]] = T::of(sa * x0[[i, j]] + sb * e);
                        target[[i, j]] = T::of(sa * e - sb * x0[[i, j]]);
                    }
                    times.push(T::of(t as f64 / tt as f64));
                }
            }
        }
        (input, times, target)
    }

    /// Minibatch loss `mean_i ‖f(x_i, t_i) − target_i‖²` and its gradient.
    pub fn loss_and_grad(&self, x0: ArrayView2<'_, f64>, rng: &mut dyn rand::RngCore) -> Result<(f64, MlpGrads<T>)> {
        let step = self.opt.step as usize;
        let (input, times, target) = self.make_batch(x0, rng);
        let (pred, cache) = forward_batch(&self.params, input.view(), &times).map_err(|e| match e {
            Error::Evaluation { what, .. } => Error::Training { step, what },
            other => other,
        })?;
        let diff = pred - &target;
        let b = x0.nrows() as f64;
        let loss = diff.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / b;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                what: "non-finite loss".into(),
            });
        }
        let g = diff * T::of(2.0 / b);
        let grads = backward(&self.params, &cache, g.view())?;
        Ok((loss, grads))
    }

    /// One optimizer update on `x0`; returns the pre-update loss.
    pub fn train_step(&mut self, x0: ArrayView2<'_, f64>, rng: &mut dyn rand::RngCore) -> Result<f64> {
        if x0.nrows() == 0 {
            return Err(Error::config("empty training batch"));
        }
        if x0.ncols() != self.params.config.data_dim {
            return Err(Error::structural(format!(
                "batch has {} columns, network expects {}",
                x0.ncols(),
                self.params.config.data_dim
            )));
        }
        let (loss, mut grads) = self.loss_and_grad(x0, rng)?;
        self.opt.step(&mut self.params, &mut grads)?;
        self.ema.update(&self.params)?;
        self.log.losses.push(loss);
        Ok(loss)
    }

    /// Runs `config.steps` updates on fresh minibatches drawn from `data`.
    pub fn fit(&mut self, data: &dyn DataSource, rng: &mut dyn rand::RngCore) -> Result<()> {
        if data.dim() != self.params.config.data_dim {
            return Err(Error::structural(format!(
                "data is {}-D, network expects {}",
                data.dim(),
                self.params.config.data_dim
            )));
        }
        for _ in 0..self.config.steps {
            let x0 = data.sample(self.config.batch, rng)?;
            self.train_step(x0.view(), rng)?;
        }
        Ok(())
    }

    /// Flow head evaluated with raw weights, or the EMA weights when `use_ema`.
    pub fn flow_head(&self, steps: usize, integrator: Integrator, use_ema: bool) -> Result<FlowHead<T>> {
        let net = if use_ema {
            self.ema.shadow.clone()
        } else {
            self.params.clone()
        };
        FlowHead::new(net, steps, integrator)
    }

    pub fn diffusion_head(&self, ddim_steps: usize) -> Result<DiffusionHead<T>> {
        let mut h = DiffusionHead::new(self.params.clone(), self.config.t_diff, ddim_steps)?;
        h.ema = Some(self.ema.clone());
        Ok(h)
    }

    pub fn diffusion_head_default(&self) -> Result<DiffusionHead<T>> {
        self.diffusion_head(DEFAULT_DDIM_STEPS)
    }
}
