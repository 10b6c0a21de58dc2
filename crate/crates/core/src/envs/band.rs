use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Classification;
use crate::error::{Error, Result};

/// `M` horizontal safe strips of half-width `r` separated by forbidden gaps of
/// half-width `W`, inside the band `x ∈ [x_min, x_max]`, `|y| ≤ y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandGeometry {
    pub modes: usize,
    pub strip_halfwidth: f64,
    pub gap_halfwidth: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BandGeometry {
    pub fn new(
        modes: usize,
        strip_halfwidth: f64,
        gap_halfwidth: f64,
        x_min: f64,
        x_max: f64,
        y_max: f64,
    ) -> Result<Self> {
        let g = Self {
            modes,
            strip_halfwidth,
            gap_halfwidth,
            x_min,
            x_max,
            y_max,
        };
        g.validate()?;
        Ok(g)
    }

    /// Strip half-width 0.5, `x ∈ [−1, 1]`, and `y_max` leaving one gap of
    /// clearance beyond the outermost strips.
    pub fn with_defaults(modes: usize, gap_halfwidth: f64) -> Result<Self> {
        let r = 0.5;
        let outer = (modes as f64 - 1.0) * (r + gap_halfwidth) + r;
        Self::new(modes, r, gap_halfwidth, -1.0, 1.0, outer + 2.0 * gap_halfwidth)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes < 2 {
            return Err(Error::config(format!(
                "band needs at least 2 modes, got {}",
                self.modes
            )));
        }
        if !(self.strip_halfwidth > 0.0 && self.gap_halfwidth > 0.0) {
            return Err(Error::config("strip and gap half-widths must be positive"));
        }
        if !(self.x_min < self.x_max) {
            return Err(Error::config("band requires x_min < x_max"));
        }
        let top = self.center(self.modes - 1) + self.strip_halfwidth;
        if !(self.y_max > 0.0) || top > self.y_max {
            return Err(Error::config(format!(
                "strips reach |y| = {top}, beyond y_max = {}",
                self.y_max
            )));
        }
        Ok(())
    }

    /// Center spacing 2(r + W).
    pub fn spacing(&self) -> f64 {
        2.0 * (self.strip_halfwidth + self.gap_halfwidth)
    }

    /// μ_i = (i − (M−1)/2)·2(r+W).
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 - (self.modes as f64 - 1.0) / 2.0) * self.spacing()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.modes).map(|i| self.center(i)).collect()
    }

    pub fn classify(&self, a: [f64; 2]) -> Classification {
        let [x, y] = a;
        if !(x >= self.x_min && x <= self.x_max) || !(y.abs() <= self.y_max) {
            return Classification::Forbidden;
        }
        // Strips are disjoint, so at most one can contain y; locate it directly.
        let s = self.spacing();
        let k = (y / s + (self.modes as f64 - 1.0) / 2.0).round();
        if k < 0.0 || k >= self.modes as f64 {
            return Classification::Forbidden;
        }
        let i = k as usize;
        if (y - self.center(i)).abs() <= self.strip_halfwidth {
            Classification::Safe(i)
        } else {
            Classification::Forbidden
        }
    }

    pub fn classify_slice(&self, a: &[f64]) -> Result<Classification> {
        match a {
            [x, y] => Ok(self.classify([*x, *y])),
            _ => Err(Error::structural(format!("band actions are 2-D, got {}", a.len()))),
        }
    }

    /// Uniform mode, then uniform point in that strip.
    pub fn sample_training<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let mut out = Array2::zeros((n, 2));
        for mut row in out.rows_mut() {
            let i = rng.random_range(0..self.modes);
            let mu = self.center(i);
            row[0] = rng.random_range(self.x_min..=self.x_max);
            row[1] = rng.random_range(mu - self.strip_halfwidth..=mu + self.strip_halfwidth);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::special::binomial_se;

    fn example() -> BandGeometry {
        BandGeometry::new(2, 0.5, 0.25, -1.0, 1.0, 3.0).unwrap()
    }

    #[test]
    fn classification_examples() {
        let g = example();
        assert_eq!(g.center(0), -0.75);
        assert_eq!(g.classify([0.0, -0.75]), Classification::Safe(0));
        assert_eq!(g.classify([0.0, 0.0]), Classification::Forbidden);
        assert_eq!(g.classify([2.0, -0.75]), Classification::Forbidden);
        assert_eq!(g.classify([0.0, 1.25]), Classification::Safe(1));
        assert_eq!(g.classify([0.0, 1.2500001]), Classification::Forbidden);
        assert_eq!(g.classify([0.0, f64::NAN]), Classification::Forbidden);
    }

    #[test]
    fn classify_matches_brute_force() {
        let g = BandGeometry::with_defaults(5, 0.1).unwrap();
        let mut rng = rng_from_seed(2);
        for _ in 0..20_000 {
            let a = [rng.random_range(-1.5..1.5), rng.random_range(-6.0..6.0)];
            let hits: Vec<usize> = (0..g.modes)
                .filter(|&i| a[0] >= g.x_min && a[0] <= g.x_max && (a[1] - g.center(i)).abs() <= g.strip_halfwidth)
                .collect();
            let expect = match hits.as_slice() {
                [i] => Classification::Safe(*i),
                _ => Classification::Forbidden,
            };
            assert_eq!(g.classify(a), expect, "{a:?}");
        }
    }

    #[test]
    fn strips_separated_by_two_w() {
        for w in [0.1, 0.25, 0.5] {
            for m in 2..=5 {
                let g = BandGeometry::with_defaults(m, w).unwrap();
                for i in 0..m - 1 {
                    let upper_edge = g.center(i) + g.strip_halfwidth;
                    let lower_edge = g.center(i + 1) - g.strip_halfwidth;
                    assert!((lower_edge - upper_edge - 2.0 * w).abs() < 1e-12);
                }
                assert!(g.center(m - 1) + g.strip_halfwidth <= g.y_max);
            }
        }
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(BandGeometry::new(1, 0.5, 0.25, -1.0, 1.0, 3.0).is_err());
        assert!(BandGeometry::new(2, 0.5, 0.0, -1.0, 1.0, 3.0).is_err());
        assert!(BandGeometry::new(2, 0.5, 0.25, 1.0, 1.0, 3.0).is_err());
        assert!(BandGeometry::new(3, 0.5, 0.25, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn training_samples_are_safe_and_balanced() {
        let g = example();
        let n = 100_000;
        let data = g.sample_training(n, &mut rng_from_seed(7));
        let mut mode0 = 0u64;
        let mut xsum = 0.0;
        for row in data.rows() {
            match g.classify([row[0], row[1]]) {
                Classification::Safe(0) => mode0 += 1,
                Classification::Safe(_) => {}
                Classification::Forbidden => panic!("unsafe training sample {row:?}"),
            }
            xsum += row[0];
        }
        let f = mode0 as f64 / n as f64;
        assert!((f - 0.5).abs() < 3.0 * binomial_se(0.5, n as u64));
        // Uniform[-1,1] has standard deviation 1/√3.
        let se = (1.0f64 / 3.0).sqrt() / (n as f64).sqrt();
        assert!((xsum / n as f64).abs() < 3.0 * se);
    }
}
