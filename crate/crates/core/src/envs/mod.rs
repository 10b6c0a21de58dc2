//! Synthetic environments: safe/forbidden action sets and rollout chains.

pub mod band;
pub mod chain;
pub mod grasp;
pub mod manifold;

use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use band::BandGeometry;
pub use chain::{ChainEnv, RolloutOutcome};
pub use grasp::{yaw_of, GraspManifold, Projection};
pub use manifold::{ActionClassifier, Circle, Manifold, TubeClassifier};

/// Validity of an action at the fixed experimental state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Safe(usize),
    Forbidden,
}

impl Classification {
    pub fn is_safe(self) -> bool {
        matches!(self, Classification::Safe(_))
    }

    /// Short label used in CSV output: the mode index, or `forbidden`.
    pub fn label(self) -> String {
        match self {
            Classification::Safe(i) => i.to_string(),
            Classification::Forbidden => "forbidden".into(),
        }
    }
}

/// Writes one action per row with a header row.
pub fn write_actions_csv<W: Write>(w: W, columns: &[&str], actions: ArrayView2<'_, f64>) -> Result<()> {
    if columns.len() != actions.ncols() {
        return Err(Error::structural(format!(
            "{} column names for {}-D actions",
            columns.len(),
            actions.ncols()
        )));
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(columns)?;
    for row in actions.rows() {
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
