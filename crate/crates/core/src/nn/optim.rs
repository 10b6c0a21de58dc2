use serde::{Deserialize, Serialize};

use super::{MlpGrads, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip threshold.
    pub clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 1e-4,
            clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW optimizer state: first/second moments and the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdamW<T: Scalar> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

pub fn global_norm<T: Scalar>(g: &[T]) -> T {
    g.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Rescales `g` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(g: &mut [T], max_norm: T) -> T {
    let norm = global_norm(g);
    if norm > max_norm {
        let scale = max_norm / norm;
        g.iter_mut().for_each(|x| *x *= scale);
    }
    norm
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, num_params: usize) -> Result<Self> {
        if !(config.lr > 0.0 && config.clip > 0.0 && config.weight_decay >= 0.0) {
            return Err(Error::config(format!(
                "AdamW needs lr > 0, clip > 0, weight_decay >= 0 (got {config:?})"
            )));
        }
        Ok(Self {
            config,
            step: 0,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
        })
    }

    /// One update: clip, moment update, bias correction, decoupled weight decay.
    /// `grads` is clipped in place.
    pub fn step(&mut self, params: &mut MlpParams<T>, grads: &mut MlpGrads<T>) -> Result<()> {
        params.ensure_same_shape(grads)?;
        if self.m.len() != params.len() {
            return Err(Error::structural(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        if let Some(i) = grads.data.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                step: self.step as usize,
                what: format!("non-finite gradient at coordinate {i}"),
            });
        }
        let c = self.config;
        clip_grad_norm(&mut grads.data, T::of(c.clip));
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let bc1 = T::one() - T::of(c.beta1.powi(t));
        let bc2 = T::one() - T::of(c.beta2.powi(t));
        let lr = T::of(c.lr);
        let decay = T::one() - lr * T::of(c.weight_decay);
        let eps = T::of(c.eps);
        for (((p, &g), m), v) in params
            .data
            .iter_mut()
            .zip(&grads.data)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Ema<T: Scalar> {
    pub decay: f64,
    pub shadow: MlpParams<T>,
}

impl<T: Scalar> Ema<T> {
    pub fn new(params: &MlpParams<T>, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::config(format!("EMA decay must lie in [0,1], got {decay}")));
        }
        Ok(Self {
            decay,
            shadow: params.clone(),
        })
    }

    /// shadow ← decay·shadow + (1−decay)·params.
    pub fn update(&mut self, params: &MlpParams<T>) -> Result<()> {
        self.shadow.ensure_same_shape(params)?;
        let d = T::of(self.decay);
        let w = T::one() - d;
        for (s, &p) in self.shadow.data.iter_mut().zip(&params.data) {
            *s = d * *s + w * p;
        }
        Ok(())
    }
}
