//! Sparse attention with edge-type embeddings, and the layer stack built on it.

mod forward;
mod params;
mod plan;

pub use forward::{
    attention_block, attention_layer_forward, bind, gradient_check, infer, loss, network_forward,
    ForwardOptions, ForwardOutput, Targets,
};
pub use params::{layer_slot, ModelConfig, ModelParams, NormKind, Slot, INPUT};
pub use plan::{check_plan, full_plan, FixedLayer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Temperature annealing: τ = 1 up to epoch `lambda`, then
/// `max(gamma^(t - lambda), floor)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub lambda: usize,
    pub gamma: f64,
    pub floor: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            lambda: 5,
            gamma: 0.99,
            floor: 0.05,
        }
    }
}

impl TemperatureSchedule {
    pub fn new(lambda: usize, gamma: f64, floor: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("gamma {gamma} outside (0, 1)")));
        }
        if floor <= 0.0 {
            return Err(Error::Config(format!(
                "temperature floor {floor} must be positive"
            )));
        }
        Ok(TemperatureSchedule {
            lambda,
            gamma,
            floor,
        })
    }

    /// A schedule that keeps τ = 1 forever.
    pub fn constant() -> Self {
        TemperatureSchedule {
            lambda: usize::MAX,
            gamma: 0.5,
            floor: 1.0,
        }
    }
}

pub fn temperature_at(s: &TemperatureSchedule, epoch: usize) -> f64 {
    if epoch <= s.lambda {
        return 1.0;
    }
    // powf is correctly rounded; powi's repeated products drift by an ulp
    s.gamma.powf((epoch - s.lambda) as f64).max(s.floor)
}

/// Rows `r ↦ s·r / max(‖r‖₂, eps)`.
pub fn normalize_v<T: Real>(v: &Tensor<T>, s: f64, eps: f64) -> Result<Tensor<T>> {
    let (rows, cols) = v.dims2()?;
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let r = v.row(i);
        let norm = r
            .iter()
            .map(|x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt();
        let f = s / norm.max(eps);
        out.extend(r.iter().map(|&x| T::of_f64(x.as_f64() * f)));
    }
    Tensor::new(&[rows, cols], out)
}
