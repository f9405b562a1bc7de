use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::reservoir::{prefilter_topk, reservoir_sample, top_k};
use super::scoreset::ScoreSet;
use crate::attention::FixedLayer;
use crate::error::{Error, Result};
use crate::graph::EdgeType;
use crate::rng;

/// How keys are chosen from a score row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Weighted sampling without replacement.
    Reservoir,
    /// Deterministic top-`deg` by score.
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub selection: Selection,
    /// Rows are first cut to their top `k_prime` entries; `None` means
    /// `4 × max(degs)`.
    pub k_prime: Option<usize>,
    pub tail_eps: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            selection: Selection::Reservoir,
            k_prime: None,
            tail_eps: 0.05,
        }
    }
}

/// Per-layer query/key sets for one batch of seed nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub seeds: Vec<usize>,
    /// Layer 1 first; the last layer's queries are the seeds.
    pub layers: Vec<FixedLayer>,
    /// Rows drawn uniformly because every score was zero.
    pub uniform_fallbacks: usize,
    /// Rows whose tail was too heavy to prefilter.
    pub prefilter_flags: usize,
}

impl BatchPlan {
    /// Query ids of layer `l` (0-based).
    pub fn queries(&self, l: usize) -> &[usize] {
        self.layers[l].queries()
    }
}

/// Backward neighborhood expansion from `seeds`: the last layer queries the
/// seeds, and every earlier layer queries all nodes the next layer reads.
/// Each query's rng stream is derived from `(seed, stream, layer, node)`.
pub fn sample_batch(
    seeds: &[usize],
    scores: &ScoreSet,
    degs: &[usize],
    cfg: &SamplerConfig,
    seed: u64,
    stream: &[u64],
) -> Result<BatchPlan> {
    if seeds.is_empty() {
        return Err(Error::Contract("batch has no seed nodes".into()));
    }
    if degs.len() != scores.num_layers() {
        return Err(Error::Config(format!(
            "{} degrees given for {} score layers",
            degs.len(),
            scores.num_layers()
        )));
    }
    if degs.contains(&0) {
        return Err(Error::Config("degrees must be positive".into()));
    }
    let n = scores.n();
    let mut seen = vec![false; n];
    for &s in seeds {
        if s >= n {
            return Err(Error::Contract(format!("unknown node id {s}")));
        }
        if std::mem::replace(&mut seen[s], true) {
            return Err(Error::Contract(format!("seed {s} listed twice")));
        }
    }
    let k_prime = cfg
        .k_prime
        .unwrap_or(4 * degs.iter().copied().max().unwrap_or(1));
    let (mut fallbacks, mut flags) = (0, 0);
    let mut layers = Vec::with_capacity(degs.len());
    let mut queries: Vec<usize> = seeds.to_vec();
    for l in (0..degs.len()).rev() {
        let layer = &scores.layers[l];
        let deg = degs[l];
        let mut nodes = queries.clone();
        let mut local: HashMap<usize, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let q = nodes.len();
        let mut keys = Vec::with_capacity(q * deg);
        let mut types = Vec::with_capacity(q * deg);
        let mut mask = Vec::with_capacity(q * deg);
        for (qi, &v) in queries.iter().enumerate() {
            let (cols, s, ts) = layer.row(v);
            if cols.is_empty() {
                return Err(Error::Contract(format!(
                    "node {v} has an empty score row in layer {}",
                    l + 1
                )));
            }
            let pre = prefilter_topk(s, k_prime, cfg.tail_eps);
            flags += pre.flagged as usize;
            let cand: Vec<f64> = pre.kept.iter().map(|&k| s[k]).collect();
            let picked: Vec<usize> = match cfg.selection {
                Selection::Max => top_k(&cand, deg),
                Selection::Reservoir => {
                    let mut r = rng::stream(seed, &[stream, &[l as u64, v as u64]].concat());
                    let out = reservoir_sample(&cand, deg, &mut r)?;
                    fallbacks += out.uniform_fallback as usize;
                    out.indices
                }
            };
            for &c in &picked {
                let k = pre.kept[c];
                let u = cols[k];
                let idx = *local.entry(u).or_insert_with(|| {
                    nodes.push(u);
                    nodes.len() - 1
                });
                keys.push(idx);
                types.push(ts[k]);
                mask.push(true);
            }
            for _ in picked.len()..deg {
                keys.push(qi);
                types.push(EdgeType::SelfLoop);
                mask.push(false);
            }
        }
        let next = nodes.clone();
        layers.push(FixedLayer {
            nodes,
            num_queries: q,
            deg,
            keys,
            types,
            mask,
        });
        queries = next;
    }
    layers.reverse();
    Ok(BatchPlan {
        seeds: seeds.to_vec(),
        layers,
        uniform_fallbacks: fallbacks,
        prefilter_flags: flags,
    })
}

/// Shuffles `train` with the epoch's stream, cuts it into batches of
/// `batch_size` and samples a plan for each.
pub fn resample_epoch(
    scores: &ScoreSet,
    degs: &[usize],
    train: &[usize],
    batch_size: usize,
    cfg: &SamplerConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<BatchPlan>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order = train.to_vec();
    order.shuffle(&mut rng::stream(seed, &[epoch, u64::MAX]));
    order
        .chunks(batch_size)
        .enumerate()
        .map(|(b, chunk)| sample_batch(chunk, scores, degs, cfg, seed, &[epoch, b as u64]))
        .collect()
}
