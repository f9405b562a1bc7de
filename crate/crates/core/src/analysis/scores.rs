use crate::error::{Error, Result};
use crate::graph::{AttentionPattern, EdgeType};
use crate::sampler::ScoreSet;

use super::stats::{energy_distance, entropy, quantile};

/// Mean row entropy per layer.
pub fn attention_entropy(scores: &ScoreSet) -> Vec<f64> {
    scores
        .layers
        .iter()
        .map(|l| {
            let n = l.csr.n();
            (0..n).map(|i| entropy(l.row(i).1)).sum::<f64>() / n.max(1) as f64
        })
        .collect()
}

/// Top-k mass statistics of one layer at one k.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct TopKStats {
    pub layer: usize,
    pub k: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl TopKStats {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Sum of the `k` largest entries of `row`.
pub fn row_topk_mass(row: &[f64], k: usize) -> f64 {
    let mut v = row.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.iter().take(k).sum()
}

/// For each layer and k = 1..=k_max, statistics of the per-node top-k mass.
pub fn topk_mass(scores: &ScoreSet, k_max: usize) -> Vec<TopKStats> {
    let mut out = Vec::new();
    for (l, layer) in scores.layers.iter().enumerate() {
        let n = layer.csr.n();
        let sorted_rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = layer.row(i).1.to_vec();
                v.sort_by(|a, b| b.total_cmp(a));
                v
            })
            .collect();
        for k in 1..=k_max {
            let mut masses: Vec<f64> = sorted_rows.iter().map(|r| r.iter().take(k).sum()).collect();
            masses.sort_by(f64::total_cmp);
            out.push(TopKStats {
                layer: l + 1,
                k,
                mean: masses.iter().sum::<f64>() / n.max(1) as f64,
                median: quantile(&masses, 0.5),
                q1: quantile(&masses, 0.25),
                q3: quantile(&masses, 0.75),
            });
        }
    }
    out
}

/// Score mass per edge type, indexed by `EdgeType::index`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EdgeTypeMass {
    /// Mean over nodes, one entry per layer.
    pub per_layer: Vec<[f64; 3]>,
    /// Mean over layers of `per_layer`.
    pub overall: [f64; 3],
}

/// Per-node type masses of one layer, with types taken from `pattern`.
pub fn node_type_masses(
    scores: &ScoreSet,
    pattern: &AttentionPattern,
    layer: usize,
) -> Result<Vec<[f64; 3]>> {
    let s = scores
        .layers
        .get(layer)
        .ok_or_else(|| Error::Dimension(format!("score set has no layer {}", layer + 1)))?;
    let p = pattern
        .layers
        .get(layer)
        .ok_or_else(|| Error::Dimension(format!("pattern has no layer {}", layer + 1)))?;
    if s.csr.n() != p.csr.n() {
        return Err(Error::Dimension(
            "score set and pattern differ in node count".into(),
        ));
    }
    (0..s.csr.n())
        .map(|i| {
            let (keys, vals, _) = s.row(i);
            let mut m = [0.0; 3];
            for (&j, &a) in keys.iter().zip(vals) {
                let t = p.edge_type(i, j).ok_or_else(|| {
                    Error::Contract(format!("score edge ({i}, {j}) not in pattern"))
                })?;
                m[t.index()] += a;
            }
            Ok(m)
        })
        .collect()
}

fn mean_masses(rows: impl Iterator<Item = [f64; 3]>) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for m in rows {
        (0..3).for_each(|t| acc[t] += m[t]);
        n += 1;
    }
    acc.map(|x| x / n.max(1) as f64)
}

/// Mean score mass per edge type, optionally restricted to `nodes`.
pub fn edge_type_attribution(
    scores: &ScoreSet,
    pattern: &AttentionPattern,
    nodes: Option<&[usize]>,
) -> Result<EdgeTypeMass> {
    let mut per_layer = Vec::with_capacity(scores.num_layers());
    for l in 0..scores.num_layers() {
        let masses = node_type_masses(scores, pattern, l)?;
        let m = match nodes {
            Some(ns) => mean_masses(ns.iter().map(|&i| masses[i])),
            None => mean_masses(masses.into_iter()),
        };
        per_layer.push(m);
    }
    let overall = mean_masses(per_layer.iter().copied());
    Ok(EdgeTypeMass { per_layer, overall })
}

/// Column names matching `EdgeTypeMass` arrays.
pub fn edge_type_names() -> [&'static str; 3] {
    EdgeType::ALL.map(|t| t.name())
}

/// Mean energy distance between the score rows of layer pairs, one
/// sample per run. Layers must share their support.
pub fn inter_layer_distances(runs: &[ScoreSet]) -> Result<Vec<Vec<f64>>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Contract("inter-layer distances need runs".into()))?;
    let (n, layers) = (first.n(), first.num_layers());
    for r in runs {
        for l in 0..layers {
            if r.layers[l].csr != first.layers[0].csr {
                return Err(Error::Contract("layers do not share a support".into()));
            }
        }
    }
    let mut out = vec![vec![0.0; layers]; layers];
    for a in 0..layers {
        for b in a + 1..layers {
            let mut total = 0.0;
            for i in 0..n {
                let xs: Vec<Vec<f64>> =
                    runs.iter().map(|r| r.layers[a].row(i).1.to_vec()).collect();
                let ys: Vec<Vec<f64>> =
                    runs.iter().map(|r| r.layers[b].row(i).1.to_vec()).collect();
                total += energy_distance(&xs, &ys)?;
            }
            out[a][b] = total / n as f64;
            out[b][a] = out[a][b];
        }
    }
    Ok(out)
}
