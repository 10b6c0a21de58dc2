use serde::{Deserialize, Serialize};

use super::grasp::{GraspManifold, AMBIENT_DIM};
use super::{BandGeometry, Classification};
use crate::error::{Error, Result};

/// Embedded submanifold with an exact nearest-point projection.
pub trait Manifold: Sync {
    fn ambient_dim(&self) -> usize;
    fn intrinsic_dim(&self) -> usize;
    /// Euclidean distance to the manifold and whether the projection was degenerate.
    fn distance_to(&self, a: &[f64]) -> Result<(f64, bool)>;
}

impl Manifold for GraspManifold {
    fn ambient_dim(&self) -> usize {
        AMBIENT_DIM
    }

    fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim()
    }

    fn distance_to(&self, a: &[f64]) -> Result<(f64, bool)> {
        let p = self.project(a)?;
        Ok((p.distance, p.degenerate))
    }
}

/// Circle of radius `radius` centered at the origin of the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub radius: f64,
}

impl Circle {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::config("circle radius must be positive"));
        }
        Ok(Self { radius })
    }
}

impl Manifold for Circle {
    fn ambient_dim(&self) -> usize {
        2
    }

    fn intrinsic_dim(&self) -> usize {
        1
    }

    fn distance_to(&self, a: &[f64]) -> Result<(f64, bool)> {
        match a {
            [x, y] => {
                let n = x.hypot(*y);
                Ok(((n - self.radius).abs(), n == 0.0))
            }
            _ => Err(Error::structural(format!("circle points are 2-D, got {}", a.len()))),
        }
    }
}

/// Validity oracle over actions.
pub trait ActionClassifier: Sync {
    fn action_dim(&self) -> usize;
    fn num_modes(&self) -> usize;
    fn classify_action(&self, a: &[f64]) -> Result<Classification>;
}

impl ActionClassifier for BandGeometry {
    fn action_dim(&self) -> usize {
        2
    }

    fn num_modes(&self) -> usize {
        self.modes
    }

    fn classify_action(&self, a: &[f64]) -> Result<Classification> {
        self.classify_slice(a)
    }
}

/// Tube classifier: safe (single mode 0) within distance `delta` of a manifold.
#[derive(Debug, Clone, Copy)]
pub struct TubeClassifier<'a, M: ?Sized> {
    pub manifold: &'a M,
    pub delta: f64,
}

impl<M: Manifold + ?Sized> ActionClassifier for TubeClassifier<'_, M> {
    fn action_dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    fn num_modes(&self) -> usize {
        1
    }

    fn classify_action(&self, a: &[f64]) -> Result<Classification> {
        let (d, _) = self.manifold.distance_to(a)?;
        Ok(if d <= self.delta {
            Classification::Safe(0)
        } else {
            Classification::Forbidden
        })
    }
}
