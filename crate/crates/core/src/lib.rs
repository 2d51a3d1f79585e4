//! Leaky recurrent networks trained to path-integrate, with the grid-cell and
//! topology analyses used to inspect them.

pub mod analysis;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod network;
pub mod noise;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod topology;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LeakyRnn64 = network::LeakyRnnParams<f64>;
pub type LeakyRnn32 = network::LeakyRnnParams<f32>;
