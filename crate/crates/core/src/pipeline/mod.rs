//! The two training phases, inference and run-directory output.

mod config;
mod predict;
mod run;
mod task;
#[cfg(test)]
mod tests;
mod train;

pub use config::{Ablation, Phase, TrainConfig};
pub use predict::{edge_percent, predict_logits, predict_probs};
pub use run::{read_history, write_history, RunDir};
pub use task::{roc_auc, Task};
pub use train::{
    effective_scores, train_estimator, train_final, train_full_graph, EpochRecord, EstimatorRun,
    FinalRun,
};

/// Sampler settings implied by a training config.
pub fn sampler_config(cfg: &TrainConfig) -> crate::sampler::SamplerConfig {
    train::sampler_config(cfg)
}
