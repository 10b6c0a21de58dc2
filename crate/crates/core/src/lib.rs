pub mod bounds;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod heads;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod planner_sim;
pub mod rng;
pub mod runtime;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations used by the experiment pipelines.
pub type MlpParams64 = nn::MlpParams<f64>;
pub type FlowHead64 = heads::FlowHead<f64>;
pub type DiffusionHead64 = heads::DiffusionHead<f64>;

/// Single-precision instantiations, for faster training.
pub type MlpParams32 = nn::MlpParams<f32>;
pub type FlowHead32 = heads::FlowHead<f32>;
pub type DiffusionHead32 = heads::DiffusionHead<f32>;
