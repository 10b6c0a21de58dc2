//! Self-describing JSON checkpoint for network parameters and training state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamW, Ema, MlpConfig, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "hallu-mlp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Checkpoint<T: Scalar> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub config: MlpConfig,
    pub tensors: Vec<TensorHeader>,
    /// Flat coefficients in the order given by `tensors`.
    pub params: Vec<T>,
    pub optimizer: Option<AdamW<T>>,
    pub ema: Option<Ema<T>>,
    pub step: u64,
    pub seed: u64,
    /// Configuration of the run that produced the checkpoint.
    pub run_config: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(
        params: &MlpParams<T>,
        optimizer: Option<&AdamW<T>>,
        ema: Option<&Ema<T>>,
        seed: u64,
        run_config: serde_json::Value,
    ) -> Self {
        let config = params.config;
        let tensors = config
            .layout()
            .tensors(&config)
            .into_iter()
            .map(|(name, shape)| TensorHeader { name, shape })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: T::NAME.into(),
            config,
            tensors,
            params: params.data.clone(),
            optimizer: optimizer.cloned(),
            ema: ema.cloned(),
            step: optimizer.map_or(0, |o| o.step),
            seed,
            run_config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("not a checkpoint: format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.scalar != T::NAME {
            return Err(Error::config(format!(
                "checkpoint stores {} coefficients, loader expects {}",
                self.scalar,
                T::NAME
            )));
        }
        let expect: Vec<TensorHeader> = self
            .config
            .layout()
            .tensors(&self.config)
            .into_iter()
            .map(|(name, shape)| TensorHeader { name, shape })
            .collect();
        if expect != self.tensors {
            return Err(Error::structural("tensor header does not match config"));
        }
        let n = self.config.num_params();
        if self.params.len() != n {
            return Err(Error::structural(format!(
                "checkpoint has {} coefficients, header implies {n}",
                self.params.len()
            )));
        }
        if let Some(o) = &self.optimizer {
            if o.m.len() != n || o.v.len() != n {
                return Err(Error::structural("optimizer moments do not match parameters"));
            }
        }
        if let Some(e) = &self.ema {
            if e.shadow.config != self.config || e.shadow.data.len() != n {
                return Err(Error::structural("EMA shadow does not match parameters"));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<MlpParams<T>> {
        MlpParams::from_flat(self.config, self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamWConfig;
    use crate::rng::rng_from_seed;

    #[test]
    fn round_trip_is_lossless() {
        let c = MlpConfig::new(2, 4, 5, 2).unwrap();
        let p = MlpParams::<f64>::init(c, &mut rng_from_seed(4));
        let mut opt = AdamW::new(AdamWConfig::default(), p.len()).unwrap();
        let mut q = p.clone();
        let mut g = MlpParams::init(c, &mut rng_from_seed(5));
        opt.step(&mut q, &mut g).unwrap();
        let ema = Ema::new(&p, 0.99).unwrap();
        let ck = Checkpoint::new(&q, Some(&opt), Some(&ema), 42, serde_json::json!({"k": 1}));
        let back = Checkpoint::<f64>::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back.params, q.data);
        assert_eq!(back.optimizer.as_ref().unwrap(), &opt);
        assert_eq!(back.ema.as_ref().unwrap(), &ema);
        assert_eq!(back.step, 1);
        assert_eq!(back.seed, 42);
    }

    #[test]
    fn wrong_scalar_or_shape_rejected() {
        let c = MlpConfig::new(2, 4, 5, 1).unwrap();
        let p = MlpParams::<f64>::zeros(c);
        let ck = Checkpoint::new(&p, None, None, 0, serde_json::Value::Null);
        let json = ck.to_json().unwrap();
        assert!(Checkpoint::<f32>::from_json(&json).is_err());
        let mut bad = ck.clone();
        bad.params.pop();
        assert!(Checkpoint::<f64>::from_json(&bad.to_json().unwrap()).is_err());
    }
}
