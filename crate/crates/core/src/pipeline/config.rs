use serde::{Deserialize, Serialize};

use crate::attention::{NormKind, TemperatureSchedule};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Estimator,
    Final,
}

/// Variants that switch off one ingredient of the method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Sample uniformly over each score row's support.
    Uniform,
    /// Keep the top-`deg` scores instead of sampling.
    Max,
    /// Estimator trained with τ = 1 throughout.
    NoTemp,
    /// Estimator trained without V normalization.
    NoVnorm,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Uniform => "uniform",
            Ablation::Max => "max",
            Ablation::NoTemp => "no-temp",
            Ablation::NoVnorm => "no-vnorm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Ablation::None,
            Ablation::Uniform,
            Ablation::Max,
            Ablation::NoTemp,
            Ablation::NoVnorm,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }

    /// Whether the ablation changes how the estimator itself is trained.
    pub fn affects_estimator(self) -> bool {
        matches!(self, Ablation::NoTemp | Ablation::NoVnorm)
    }
}

/// Everything a training run needs besides data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub phase: Phase,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub dropout: f64,
    pub temperature: TemperatureSchedule,
    pub degs: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub norm: NormKind,
    pub bn_momentum: f64,
    pub k_prime: Option<usize>,
    pub tail_eps: f64,
    /// Independent samplings averaged when evaluating the final network.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::estimator()
    }
}

impl TrainConfig {
    pub fn estimator() -> Self {
        TrainConfig {
            phase: Phase::Estimator,
            width: 4,
            heads: 1,
            layers: 2,
            epochs: 200,
            lr: 0.01,
            weight_decay: 1e-3,
            warmup_epochs: 0,
            dropout: 0.0,
            temperature: TemperatureSchedule::default(),
            degs: Vec::new(),
            batch_size: usize::MAX,
            seed: 0,
            ablation: Ablation::None,
            norm: NormKind::Layer,
            bn_momentum: 0.1,
            k_prime: None,
            tail_eps: 0.05,
            eval_samples: 1,
        }
    }

    pub fn final_net(degs: Vec<usize>) -> Self {
        TrainConfig {
            phase: Phase::Final,
            width: 32,
            heads: 2,
            layers: degs.len(),
            epochs: 100,
            dropout: 0.1,
            degs,
            batch_size: 256,
            norm: NormKind::Batch,
            ..Self::estimator()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} must split evenly into {} heads",
                self.width, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "learning rate must be positive and weight decay nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        match self.phase {
            Phase::Estimator => {
                if self.heads != 1 {
                    return Err(Error::Config("the estimator uses a single head".into()));
                }
                if matches!(self.ablation, Ablation::Uniform | Ablation::Max) {
                    return Err(Error::Config(format!(
                        "ablation `{}` applies to the final network",
                        self.ablation.name()
                    )));
                }
            }
            Phase::Final => {
                if self.degs.len() != self.layers {
                    return Err(Error::Config(format!(
                        "{} degrees given for {} layers",
                        self.degs.len(),
                        self.layers
                    )));
                }
                if self.degs.contains(&0) {
                    return Err(Error::Config("degrees must be positive".into()));
                }
                if self.eval_samples == 0 {
                    return Err(Error::Config("eval_samples must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Temperature schedule actually used, after the no-temp ablation.
    pub fn effective_temperature(&self) -> TemperatureSchedule {
        if self.ablation == Ablation::NoTemp || self.phase == Phase::Final {
            TemperatureSchedule::constant()
        } else {
            self.temperature
        }
    }
}
