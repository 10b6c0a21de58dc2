//! Central finite-difference check of the training-loss gradient.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HeadKind, TrainConfig, Trainer};
use crate::error::Result;
use crate::nn::{MlpConfig, MlpParams};
use crate::rng::rng_from_seed;

/// Denominator floor of the relative error. Central differences with
/// `h = 1e-5` carry an absolute error near 1e-10, so gradients much
/// smaller than this floor are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub kind: HeadKind,
    pub data_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub case: GradCase,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Compares every coordinate of the analytic loss gradient with a central
/// difference of step `h`. The batch noise is replayed from a fixed seed, so
/// the loss is a deterministic function of the parameters.
pub fn check_loss_gradient(case: GradCase, h: f64) -> Result<GradCheck> {
    let c = MlpConfig::new(case.data_dim, case.embed_dim, case.hidden, case.depth)?;
    let mut rng = rng_from_seed(case.seed);
    let mut params = MlpParams::<f64>::init(c, &mut rng);
    // Perturb LayerNorm gains and offsets away from their 1 / 0 init.
    for v in params.data.iter_mut() {
        *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let x0 = Array2::from_shape_simple_fn((case.batch, case.data_dim), || rng.sample(StandardNormal));
    let noise_seed = case.seed ^ 0x9e37_79b9;
    let mut tr = Trainer::new(case.kind, params, TrainConfig::default())?;
    let (_, g) = tr.loss_and_grad(x0.view(), &mut rng_from_seed(noise_seed))?;
    let mut worst = (0.0f64, 0usize);
    for i in 0..g.data.len() {
        let orig = tr.params.data[i];
        tr.params.data[i] = orig + h;
        let hi = tr.loss_and_grad(x0.view(), &mut rng_from_seed(noise_seed))?.0;
        tr.params.data[i] = orig - h;
        let lo = tr.loss_and_grad(x0.view(), &mut rng_from_seed(noise_seed))?.0;
        tr.params.data[i] = orig;
        let fd = (hi - lo) / (2.0 * h);
        let a = g.data[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheck {
        case,
        checked: g.data.len(),
        max_rel_err: worst.0,
        worst_index: worst.1,
    })
}

/// 24 configurations spanning both heads, 2-D and 7-D data, depths 1 to 3
/// and single-row to multi-row batches.
pub fn standard_cases() -> Vec<GradCase> {
    let shapes = [
        (2, 4, 5, 1, 1),
        (2, 8, 8, 2, 3),
        (2, 6, 16, 3, 8),
        (7, 4, 8, 1, 4),
        (7, 8, 12, 2, 2),
        (7, 6, 6, 3, 5),
    ];
    let mut out = Vec::new();
    for kind in [HeadKind::Flow, HeadKind::Diffusion] {
        for (i, &(data_dim, embed_dim, hidden, depth, batch)) in shapes.iter().enumerate() {
            for rep in 0..2u64 {
                out.push(GradCase {
                    kind,
                    data_dim,
                    embed_dim,
                    hidden,
                    depth,
                    batch,
                    seed: 1000 + 10 * i as u64 + rep + if kind == HeadKind::Diffusion { 500 } else { 0 },
                });
            }
        }
    }
    out
}
