//! Synthetic graphs for desk-scale experiments.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{write_graph_dir, Csr, Graph, Labels, Split};
use crate::numerics::Tensor;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    BridgeComponents,
    HomophilySbm,
    HeterophilySbm,
}

/// Generator settings; JSON-serializable with defaults for every field but
/// `generator`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub components: usize,
    pub component_size: usize,
    pub bridges: usize,
    /// Edge probability inside a bridge-task component (1 gives cliques).
    pub intra_density: f64,
    pub blocks: usize,
    pub block_size: usize,
    /// Within/between block edge probabilities; `None` picks the flavor default.
    pub p_in: Option<f64>,
    pub p_out: Option<f64>,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub split: [f64; 3],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            generator: Generator::BridgeComponents,
            components: 8,
            component_size: 24,
            bridges: 4,
            intra_density: 1.0,
            blocks: 4,
            block_size: 50,
            p_in: None,
            p_out: None,
            feature_dim: 8,
            noise: 0.1,
            seed: 0,
            split: [0.6, 0.2, 0.2],
        }
    }
}

impl SyntheticSpec {
    pub fn bridge(seed: u64) -> Self {
        SyntheticSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn sbm(generator: Generator, seed: u64) -> Self {
        SyntheticSpec {
            generator,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.split.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f < 0.0) {
            return Err(Error::Config(format!(
                "split fractions {:?} must be nonnegative and sum to 1",
                self.split
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be nonnegative".into()));
        }
        match self.generator {
            Generator::BridgeComponents => {
                if self.component_size < 2 || self.components < 1 {
                    return Err(Error::Config("components need at least 2 nodes".into()));
                }
                let pairs = self.components * (self.components - 1) / 2;
                if self.bridges > pairs {
                    return Err(Error::Config(format!(
                        "{} bridges but only {pairs} component pairs",
                        self.bridges
                    )));
                }
                if !(0.0..=1.0).contains(&self.intra_density) {
                    return Err(Error::Config("intra_density outside [0, 1]".into()));
                }
            }
            _ => {
                if self.blocks < 1 || self.block_size < 2 || self.feature_dim == 0 {
                    return Err(Error::Config(
                        "blocks need at least 2 nodes and features".into(),
                    ));
                }
                let (p, q) = self.probabilities();
                if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
                    return Err(Error::Config("edge probabilities outside [0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    /// Within- and between-block probabilities for the SBM flavors.
    pub fn probabilities(&self) -> (f64, f64) {
        let (p, q) = match self.generator {
            Generator::HeterophilySbm => (0.01, 0.1),
            _ => (0.3, 0.01),
        };
        (self.p_in.unwrap_or(p), self.p_out.unwrap_or(q))
    }

    pub fn num_nodes(&self) -> usize {
        match self.generator {
            Generator::BridgeComponents => self.components * self.component_size,
            _ => self.blocks * self.block_size,
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Graph> {
    match spec.generator {
        Generator::BridgeComponents => gen_bridge_task(spec),
        _ => gen_sbm(spec),
    }
}

/// Writes the graph files plus `spec.json` into `dir`.
pub fn write_dataset(g: &Graph, spec: &SyntheticSpec, dir: &Path) -> Result<()> {
    write_graph_dir(g, dir)?;
    let p = dir.join("spec.json");
    std::fs::write(&p, serde_json::to_string_pretty(spec)?).map_err(|e| Error::io(&p, e))
}

/// Splits each label group separately by the requested fractions.
fn stratified_split(labels: &[usize], fractions: [f64; 3], r: &mut impl Rng) -> Vec<Split> {
    let mut split = vec![Split::Test; labels.len()];
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(r);
        let m = members.len() as f64;
        let n_train = (fractions[0] * m).round() as usize;
        let n_val = ((fractions[0] + fractions[1]) * m).round() as usize - n_train;
        for (k, &v) in members.iter().enumerate() {
            split[v] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    split
}

/// Components of two colors joined by single bridge edges. A node's label is
/// 1 iff its connected component holds both colors.
///
/// Bridges pair up distinct components first (a matching) and only reuse
/// components once every component is bridged.
pub fn gen_bridge_task(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    if spec.generator != Generator::BridgeComponents {
        return Err(Error::Config("not a bridge-task spec".into()));
    }
    let mut r = rng::stream(spec.seed, &[0xb1d9e]);
    let (c, size) = (spec.components, spec.component_size);
    let n = c * size;
    let mut colors: Vec<usize> = (0..c).map(|_| r.random_range(0..2)).collect();
    if c >= 2 && colors.iter().all(|&x| x == colors[0]) {
        let k = r.random_range(0..c);
        colors[k] ^= 1;
    }
    let mut edges = Vec::new();
    for comp in 0..c {
        let base = comp * size;
        let mut order: Vec<usize> = (0..size).collect();
        order.shuffle(&mut r);
        // a random spanning path keeps each component connected
        for w in order.windows(2) {
            edges.push((base + w[0], base + w[1]));
        }
        for a in 0..size {
            for b in a + 1..size {
                if r.random::<f64>() < spec.intra_density {
                    edges.push((base + a, base + b));
                }
            }
        }
    }
    let mut pairs = Vec::new();
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(&mut r);
    for w in perm.chunks_exact(2) {
        pairs.push((w[0].min(w[1]), w[0].max(w[1])));
    }
    pairs.truncate(spec.bridges);
    let mut rest: Vec<(usize, usize)> = (0..c)
        .flat_map(|a| (a + 1..c).map(move |b| (a, b)))
        .filter(|p| !pairs.contains(p))
        .collect();
    rest.shuffle(&mut r);
    pairs.extend(rest.into_iter().take(spec.bridges - pairs.len()));
    for &(a, b) in &pairs {
        let u = a * size + r.random_range(0..size);
        let v = b * size + r.random_range(0..size);
        edges.push((u, v));
    }
    let adjacency = Csr::from_edges(n, &edges, true)?;
    let color = |v: usize| colors[v / size];
    let labels = mixed_color_labels(&adjacency, &color);
    let normal = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut feats = Vec::with_capacity(n * 2);
    for v in 0..n {
        for k in 0..2 {
            let hot = if color(v) == k { 1.0 } else { 0.0 };
            feats.push(
                hot + if spec.noise > 0.0 {
                    normal.sample(&mut r)
                } else {
                    0.0
                },
            );
        }
    }
    let split = stratified_split(&labels, spec.split, &mut r);
    Graph::new(
        adjacency,
        Tensor::new(&[n, 2], feats)?,
        Labels::classes_with(labels, 2),
        split,
    )
}

/// Union-find labeling: 1 iff the node's component has both colors.
fn mixed_color_labels(adj: &Csr, color: &dyn Fn(usize) -> usize) -> Vec<usize> {
    let comp = adj.components();
    let k = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut seen = vec![[false; 2]; k];
    for v in 0..adj.n() {
        seen[comp[v]][color(v)] = true;
    }
    (0..adj.n())
        .map(|v| (seen[comp[v]][0] && seen[comp[v]][1]) as usize)
        .collect()
}

/// Stochastic block model; labels are blocks and features are a random
/// per-block mean plus Gaussian noise.
pub fn gen_sbm(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    if spec.generator == Generator::BridgeComponents {
        return Err(Error::Config("not an SBM spec".into()));
    }
    let mut r = rng::stream(spec.seed, &[0x5b3]);
    let (k, size, f) = (spec.blocks, spec.block_size, spec.feature_dim);
    let n = k * size;
    let (p, q) = spec.probabilities();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let prob = if a / size == b / size { p } else { q };
            if r.random::<f64>() < prob {
                edges.push((a, b));
            }
        }
    }
    let adjacency = Csr::from_edges(n, &edges, true)?;
    let std = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..f).map(|_| std.sample(&mut r)).collect())
        .collect();
    let mut feats = Vec::with_capacity(n * f);
    for v in 0..n {
        for m in &means[v / size] {
            feats.push(m + spec.noise * std.sample(&mut r));
        }
    }
    let labels: Vec<usize> = (0..n).map(|v| v / size).collect();
    let split = stratified_split(&labels, spec.split, &mut r);
    Graph::new(
        adjacency,
        Tensor::new(&[n, f], feats)?,
        Labels::classes_with(labels, k),
        split,
    )
}

/// Fraction of directed edges joining same-label nodes.
pub fn homophily(g: &Graph) -> f64 {
    let Labels::Classes { ids, .. } = &g.labels else {
        return f64::NAN;
    };
    let m = g.adjacency.nnz();
    if m == 0 {
        return f64::NAN;
    }
    g.adjacency
        .edges()
        .filter(|&(i, j)| ids[i] == ids[j])
        .count() as f64
        / m as f64
}
