use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionClassifier, Classification};
use crate::error::{Error, Result};
use crate::heads::StepSampler;

/// Rectangular grid over a 2-D latent box, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl LatentGrid {
    pub fn square(half: f64, n: usize) -> Self {
        Self {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
            nx: n,
            ny: n,
        }
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (lo + hi)],
            _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    /// Grid points, x varying fastest.
    pub fn points(&self) -> Array2<f64> {
        let xs = Self::axis(self.x_min, self.x_max, self.nx);
        let ys = Self::axis(self.y_min, self.y_max, self.ny);
        let mut out = Array2::zeros((xs.len() * ys.len(), 2));
        for (j, &y) in ys.iter().enumerate() {
            for (i, &x) in xs.iter().enumerate() {
                out[[j * xs.len() + i, 0]] = x;
                out[[j * xs.len() + i, 1]] = y;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamPoint {
    pub z: [f64; 2],
    pub a: [f64; 2],
    pub class: Classification,
}

/// Decodes every grid latent and classifies the action. Seam points are the
/// entries classified `Forbidden`.
pub fn seam_map<S, C>(sampler: &S, classifier: &C, grid: &LatentGrid) -> Result<Vec<SeamPoint>>
where
    S: StepSampler<f64> + ?Sized,
    C: ActionClassifier + ?Sized,
{
    if sampler.dim() != 2 || classifier.action_dim() != 2 {
        return Err(Error::structural("seam maps need 2-D latents and actions"));
    }
    let z = grid.points();
    if z.nrows() == 0 {
        return Ok(Vec::new());
    }
    let a = sampler.sample(z.view())?;
    z.rows()
        .into_iter()
        .zip(a.rows())
        .enumerate()
        .map(|(i, (zr, ar))| {
            let act = [ar[0], ar[1]];
            let class = classifier.classify_action(&act).map_err(|e| Error::Sample {
                index: i,
                source: Box::new(e),
            })?;
            Ok(SeamPoint {
                z: [zr[0], zr[1]],
                a: act,
                class,
            })
        })
        .collect()
}

/// CSV with columns `zx,zy,ax,ay,class`.
pub fn write_seam_csv<W: Write>(w: W, points: &[SeamPoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["zx", "zy", "ax", "ay", "class"])?;
    for p in points {
        wr.write_record([
            p.z[0].to_string(),
            p.z[1].to_string(),
            p.a[0].to_string(),
            p.a[1].to_string(),
            p.class.label(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
