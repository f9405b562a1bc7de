pub mod analysis;
pub mod attention;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod graph;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
