use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizon-`T` rollout in which step `t` makes progress with probability `γ_t`,
/// independently of the other steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEnv {
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub success: bool,
    /// 1-based index of the first step without progress.
    pub failure_step: Option<usize>,
}

impl ChainEnv {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::config("chain horizon must be at least 1"));
        }
        if let Some(t) = gammas.iter().position(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::config(format!(
                "progress probability at step {} is {}, outside [0,1]",
                t + 1,
                gammas[t]
            )));
        }
        Ok(Self { gammas })
    }

    pub fn constant(gamma: f64, horizon: usize) -> Result<Self> {
        Self::new(vec![gamma; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.gammas.len()
    }

    pub fn rollout<R: Rng + ?Sized>(&self, rng: &mut R) -> RolloutOutcome {
        for (t, &g) in self.gammas.iter().enumerate() {
            // random::<f64>() lies in [0,1): γ = 1 always passes, γ = 0 never does.
            if rng.random::<f64>() >= g {
                return RolloutOutcome {
                    success: false,
                    failure_step: Some(t + 1),
                };
            }
        }
        RolloutOutcome {
            success: true,
            failure_step: None,
        }
    }
}
