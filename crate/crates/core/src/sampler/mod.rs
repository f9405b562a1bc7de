//! Score-guided neighbor sampling and fixed-degree batch construction.

mod batch;
mod reservoir;
mod scoreset;

pub use batch::{resample_epoch, sample_batch, BatchPlan, SamplerConfig, Selection};
pub use reservoir::{prefilter_topk, reservoir_sample, top_k, Prefiltered, Sampled};
pub use scoreset::{ScoreLayer, ScoreMeta, ScoreSet};
