use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AMBIENT_DIM: usize = 7;
pub const INTRINSIC_DIM: usize = 2;
pub const CODIM: usize = AMBIENT_DIM - INTRINSIC_DIM;

pub const COLUMNS: [&str; AMBIENT_DIM] = ["x", "y", "h", "roll", "pitch", "sin_yaw", "cos_yaw"];

/// Side-grasp manifold in `[x, y, h, roll, pitch, sin(yaw), cos(yaw)]`:
/// a ring of radius `ring_radius` in (x, y), zero roll and pitch, yaw facing
/// the ring center, and height in `[h_min, h_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspManifold {
    pub ring_radius: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for GraspManifold {
    fn default() -> Self {
        Self {
            ring_radius: 1.0,
            h_min: 0.0,
            h_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: [f64; AMBIENT_DIM],
    pub distance: f64,
    pub theta: f64,
    pub height: f64,
    /// θ* was undetermined (zero alignment vector) and set to 0.
    pub degenerate: bool,
}

/// Inward-facing yaw for a gripper at ring angle θ.
#[inline]
pub fn yaw_of(theta: f64) -> f64 {
    theta + PI
}

impl GraspManifold {
    pub fn new(ring_radius: f64, h_min: f64, h_max: f64) -> Result<Self> {
        let m = Self {
            ring_radius,
            h_min,
            h_max,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ring_radius > 0.0) {
            return Err(Error::config("ring radius must be positive"));
        }
        if !(self.h_min < self.h_max) {
            return Err(Error::config("height interval requires h_min < h_max"));
        }
        Ok(())
    }

    pub fn ambient_dim(&self) -> usize {
        AMBIENT_DIM
    }

    pub fn intrinsic_dim(&self) -> usize {
        INTRINSIC_DIM
    }

    fn point_unchecked(&self, theta: f64, h: f64) -> [f64; AMBIENT_DIM] {
        let r = self.ring_radius;
        let yaw = yaw_of(theta);
        [r * theta.cos(), r * theta.sin(), h, 0.0, 0.0, yaw.sin(), yaw.cos()]
    }

    pub fn chart(&self, theta: f64, h: f64) -> Result<[f64; AMBIENT_DIM]> {
        if !(h >= self.h_min && h <= self.h_max) {
            return Err(Error::domain(format!(
                "height {h} outside [{}, {}]",
                self.h_min, self.h_max
            )));
        }
        Ok(self.point_unchecked(theta, h))
    }

    /// Nearest manifold point.
    ///
    /// ‖a − chart(θ, h)‖² separates into a height term and
    /// `const − 2[(r·x − cos_yaw)·cos θ + (r·y − sin_yaw)·sin θ]`, so the
    /// optimal angle is `atan2(r·y − sin_yaw, r·x − cos_yaw)` and the optimal
    /// height is the clamped input height.
    pub fn project(&self, a: &[f64]) -> Result<Projection> {
        if a.len() != AMBIENT_DIM {
            return Err(Error::structural(format!(
                "grasp actions are {AMBIENT_DIM}-D, got {}",
                a.len()
            )));
        }
        let r = self.ring_radius;
        let sy = r * a[1] - a[5];
        let cx = r * a[0] - a[6];
        let degenerate = sy == 0.0 && cx == 0.0;
        let theta = if degenerate { 0.0 } else { sy.atan2(cx) };
        let height = a[2].clamp(self.h_min, self.h_max);
        let point = self.point_unchecked(theta, height);
        let distance = a.iter().zip(&point).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        Ok(Projection {
            point,
            distance,
            theta,
            height,
            degenerate,
        })
    }

    pub fn distance(&self, a: &[f64]) -> Result<f64> {
        Ok(self.project(a)?.distance)
    }

    /// Uniform (θ, h) through the chart plus isotropic N(0, σ²I₇) noise.
    pub fn sample_training<R: Rng + ?Sized>(&self, noise_sigma: f64, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        if !(noise_sigma >= 0.0) {
            return Err(Error::config(format!("noise_sigma must be >= 0, got {noise_sigma}")));
        }
        let mut out = Array2::zeros((n, AMBIENT_DIM));
        for mut row in out.rows_mut() {
            let theta = rng.random_range(0.0..TAU);
            let h = rng.random_range(self.h_min..=self.h_max);
            let p = self.point_unchecked(theta, h);
            for (k, v) in p.iter().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                row[k] = v + noise_sigma * e;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn chart_examples() {
        let m = GraspManifold::default();
        let p = m.chart(0.0, 0.5).unwrap();
        let expect = [1.0, 0.0, 0.5, 0.0, 0.0, 0.0, -1.0];
        for k in 0..7 {
            assert!((p[k] - expect[k]).abs() < 1e-15, "k={k}");
        }
        assert!(m.chart(0.0, 1.5).is_err());
        let q = m.chart(0.3 + TAU, 0.2).unwrap();
        let q0 = m.chart(0.3, 0.2).unwrap();
        for k in 0..7 {
            assert!((q[k] - q0[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn on_manifold_and_roll_offset() {
        let m = GraspManifold::new(1.3, -0.2, 0.9).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..200 {
            let th = rng.random_range(-10.0..10.0);
            let h = rng.random_range(-0.2..0.9);
            let p = m.chart(th, h).unwrap();
            assert!(m.distance(&p).unwrap() < 1e-12);
            let rho = rng.random_range(-0.3..0.3);
            let mut q = p;
            q[3] += rho;
            assert!((m.distance(&q).unwrap() - rho.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_input_flagged() {
        let m = GraspManifold::default();
        let pr = m.project(&[0.0, 0.0, 0.5, 0.1, 0.0, 0.0, 0.0]).unwrap();
        assert!(pr.degenerate);
        assert_eq!(pr.theta, 0.0);
    }

    #[test]
    fn projection_is_idempotent() {
        let m = GraspManifold::default();
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = m.project(&a).unwrap();
            assert!(m.project(&p.point).unwrap().distance < 1e-10);
        }
    }

    #[test]
    fn projection_beats_grid_oracle() {
        let m = GraspManifold::default();
        let mut rng = rng_from_seed(17);
        let (nt, nh) = (4096, 256);
        // Grid spacing bounds: chart is √(r²+1)-Lipschitz in θ and 1-Lipschitz in h.
        let slack = 2f64.sqrt() * (TAU / nt as f64) / 2.0 + (1.0 / (nh - 1) as f64) / 2.0;
        for _ in 0..20 {
            let a: Vec<f64> = (0..7).map(|_| rng.random_range(-1.5..1.5)).collect();
            let d = m.distance(&a).unwrap();
            let mut best = f64::INFINITY;
            for i in 0..nt {
                let th = TAU * i as f64 / nt as f64;
                for j in 0..nh {
                    let h = j as f64 / (nh - 1) as f64;
                    let p = m.chart(th, h).unwrap();
                    let dist = a.iter().zip(&p).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                    best = best.min(dist);
                }
            }
            assert!(d <= best + 1e-6, "projection {d} worse than grid {best}");
            assert!(
                d >= best - slack,
                "projection {d} below grid {best} by more than resolution"
            );
        }
    }

    #[test]
    fn noiseless_samples_on_manifold() {
        let m = GraspManifold::default();
        let s = m.sample_training(0.0, 5000, &mut rng_from_seed(4)).unwrap();
        let mut hsum = 0.0;
        for row in s.rows() {
            assert!(m.distance(row.as_slice().unwrap()).unwrap() < 1e-10);
            hsum += row[2];
        }
        let se = (1.0f64 / 12.0).sqrt() / (5000f64).sqrt();
        assert!((hsum / 5000.0 - 0.5).abs() < 3.0 * se);
    }
}
