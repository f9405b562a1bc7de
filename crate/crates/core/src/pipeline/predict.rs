use super::task::Task;
use crate::attention::{infer, ModelParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::Tensor;
use crate::rng;
use crate::sampler::{sample_batch, SamplerConfig, ScoreSet};

/// Logits for `nodes` from one sampling, processed `batch_size` nodes at a time.
#[allow(clippy::too_many_arguments)]
pub fn predict_logits(
    params: &ModelParams<f32>,
    g: &Graph,
    scores: &ScoreSet,
    degs: &[usize],
    nodes: &[usize],
    batch_size: usize,
    scfg: &SamplerConfig,
    seed: u64,
) -> Result<Tensor<f64>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if let Some(&v) = nodes.iter().find(|&&v| v >= g.n()) {
        return Err(Error::Contract(format!("unknown node id {v}")));
    }
    let features = g.features.cast::<f32>();
    let width = params.config.out_dim;
    let mut out = Vec::with_capacity(nodes.len() * width);
    for (b, chunk) in nodes.chunks(batch_size).enumerate() {
        let plan = sample_batch(chunk, scores, degs, scfg, seed, &[b as u64])?;
        let (logits, _) = infer(params, &features, &plan.layers, 1.0)?;
        out.extend(logits.data().iter().map(|&x| x as f64));
    }
    let t = Tensor::new(&[nodes.len(), width], out)?;
    if !t.all_finite() {
        return Err(Error::Numeric(
            "prediction produced non-finite logits".into(),
        ));
    }
    Ok(t)
}

/// Class probabilities for `nodes`, averaged over `n_samples` independent
/// samplings.
#[allow(clippy::too_many_arguments)]
pub fn predict_probs(
    params: &ModelParams<f32>,
    g: &Graph,
    scores: &ScoreSet,
    degs: &[usize],
    nodes: &[usize],
    n_samples: usize,
    batch_size: usize,
    scfg: &SamplerConfig,
    seed: u64,
) -> Result<Tensor<f64>> {
    if n_samples == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    let task = Task::of(&g.labels);
    let mut acc: Option<Tensor<f64>> = None;
    for s in 0..n_samples {
        let logits = predict_logits(
            params,
            g,
            scores,
            degs,
            nodes,
            batch_size,
            scfg,
            rng::derive_seed(seed, &[s as u64]),
        )?;
        let p = task.probabilities(&logits);
        acc = Some(match acc {
            None => p,
            Some(mut a) => {
                a.data_mut()
                    .iter_mut()
                    .zip(p.data())
                    .for_each(|(x, y)| *x += y);
                a
            }
        });
    }
    let inv = 1.0 / n_samples as f64;
    Ok(acc.expect("n_samples > 0").map(|x| x * inv))
}

/// Share of augmented attention edges kept per layer on average:
/// `Σ_ℓ Σ_i min(deg_ℓ, |row_i|) / (L · m_aug)`.
pub fn edge_percent(scores: &ScoreSet, degs: &[usize], m_aug: usize) -> Result<f64> {
    if degs.len() != scores.num_layers() {
        return Err(Error::Config(format!(
            "{} degrees for {} score layers",
            degs.len(),
            scores.num_layers()
        )));
    }
    if m_aug == 0 || degs.is_empty() {
        return Err(Error::Contract(
            "edge percent needs edges and layers".into(),
        ));
    }
    let kept: usize = scores
        .layers
        .iter()
        .zip(degs)
        .map(|(l, &d)| {
            (0..l.csr.n())
                .map(|i| l.csr.degree(i).min(d))
                .sum::<usize>()
        })
        .sum();
    Ok(kept as f64 / (degs.len() * m_aug) as f64)
}
