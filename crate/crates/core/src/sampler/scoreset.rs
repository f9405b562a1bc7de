use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::FixedLayer;
use crate::error::{Error, Result};
use crate::graph::{Csr, EdgeType};
use crate::numerics::Tensor;

/// Where a score set came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub width: usize,
    pub best_epoch: usize,
    /// Estimator variant: `none`, `no-temp` or `no-vnorm`.
    pub ablation: String,
}

impl Default for ScoreMeta {
    fn default() -> Self {
        ScoreMeta {
            width: 0,
            best_epoch: 0,
            ablation: "none".into(),
        }
    }
}

/// Scores of one layer in CSR layout; rows sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLayer {
    pub csr: Csr,
    pub scores: Vec<f64>,
    pub types: Vec<EdgeType>,
}

impl ScoreLayer {
    pub fn row(&self, i: usize) -> (&[usize], &[f64], &[EdgeType]) {
        let p = self.csr.row_ptr();
        let r = p[i]..p[i + 1];
        (self.csr.row(i), &self.scores[r.clone()], &self.types[r])
    }

    pub fn max_degree(&self) -> usize {
        (0..self.csr.n())
            .map(|i| self.csr.degree(i))
            .max()
            .unwrap_or(0)
    }
}

/// Learned attention scores for every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub layers: Vec<ScoreLayer>,
    pub meta: ScoreMeta,
}

fn edge_type(graph: &Csr, i: usize, j: usize) -> EdgeType {
    if graph.contains(i, j) {
        EdgeType::Graph
    } else if i == j {
        EdgeType::SelfLoop
    } else {
        EdgeType::Expander
    }
}

fn renormalize(csr: &Csr, scores: &mut [f64]) -> Result<()> {
    let p = csr.row_ptr();
    for i in 0..csr.n() {
        let row = &mut scores[p[i]..p[i + 1]];
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Contract(format!("score row {i} has no mass")));
        }
        row.iter_mut().for_each(|a| *a /= s);
    }
    Ok(())
}

impl ScoreSet {
    /// Collects head-averaged scores from a forward pass over an unsampled
    /// plan (all nodes as queries, ids equal to positions).
    pub fn from_full_plan(
        plan: &[FixedLayer],
        scores: &[Tensor<f64>],
        meta: ScoreMeta,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(plan.len());
        for (layer, s) in plan.iter().zip(scores) {
            let n = layer.num_queries;
            if layer.nodes.len() != n || layer.nodes.iter().enumerate().any(|(i, &v)| i != v) {
                return Err(Error::Contract("score extraction needs a full plan".into()));
            }
            let mut row_ptr = vec![0];
            let (mut cols, mut vals, mut types) = (Vec::new(), Vec::new(), Vec::new());
            for q in 0..n {
                for (slot, key) in layer.row_keys(q) {
                    cols.push(key);
                    vals.push(s.at(q, slot));
                    types.push(layer.types[q * layer.deg + slot]);
                }
                row_ptr.push(cols.len());
            }
            let csr = Csr::from_parts(row_ptr, cols)?;
            renormalize(&csr, &mut vals)?;
            layers.push(ScoreLayer {
                csr,
                scores: vals,
                types,
            });
        }
        Ok(ScoreSet { layers, meta })
    }

    pub fn n(&self) -> usize {
        self.layers.first().map_or(0, |l| l.csr.n())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Same support with every row uniform.
    pub fn uniform(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut scores = l.scores.clone();
                let p = l.csr.row_ptr();
                for i in 0..l.csr.n() {
                    let d = (p[i + 1] - p[i]) as f64;
                    scores[p[i]..p[i + 1]].iter_mut().for_each(|a| *a = 1.0 / d);
                }
                ScoreLayer {
                    scores,
                    ..l.clone()
                }
            })
            .collect();
        ScoreSet {
            layers,
            meta: self.meta.clone(),
        }
    }

    fn check_rows(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            for i in 0..layer.csr.n() {
                let (_, s, _) = layer.row(i);
                let sum: f64 = s.iter().sum();
                if s.is_empty() || (sum - 1.0).abs() > 1e-5 || s.iter().any(|&a| !(a >= 0.0)) {
                    return Err(Error::Contract(format!(
                        "layer {} row {i} is not a distribution",
                        l + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn meta_line(&self) -> String {
        format!(
            "# scoreset width={} best_epoch={} ablation={}",
            self.meta.width, self.meta.best_epoch, self.meta.ablation
        )
    }

    /// Text layout: a metadata comment, then per layer `layer ℓ n nnz` followed
    /// by `i j score` lines with six significant digits.
    pub fn save_text(&self, path: &Path) -> Result<()> {
        let mut s = self.meta_line();
        s.push('\n');
        for (l, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {} {} {}", l + 1, layer.csr.n(), layer.csr.nnz());
            for ((i, j), a) in layer.csr.edges().zip(&layer.scores) {
                let _ = writeln!(s, "{i} {j} {a:.5e}");
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Reads a text score set. Edge types are re-derived from `graph`
    /// (self-loops, graph edges, the rest expander) and rows are renormalized
    /// to undo rounding.
    pub fn load_text(path: &Path, graph: &Csr) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut meta = ScoreMeta::default();
        let mut layers = Vec::new();
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .peekable();
        while let Some((ln, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("width", v)) => {
                            meta.width = v.parse().map_err(|_| bad(ln, "bad width".into()))?
                        }
                        Some(("best_epoch", v)) => {
                            meta.best_epoch =
                                v.parse().map_err(|_| bad(ln, "bad best_epoch".into()))?
                        }
                        Some(("ablation", v)) => meta.ablation = v.to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            let head: Vec<&str> = line.split_whitespace().collect();
            let (n, nnz) = match head[..] {
                ["layer", _, n, nnz] => (
                    n.parse::<usize>()
                        .map_err(|_| bad(ln, "bad node count".into()))?,
                    nnz.parse::<usize>()
                        .map_err(|_| bad(ln, "bad edge count".into()))?,
                ),
                _ => return Err(bad(ln, format!("expected `layer l n nnz`, found `{line}`"))),
            };
            if n != graph.n() {
                return Err(Error::Dimension(format!(
                    "score set has {n} nodes, graph has {}",
                    graph.n()
                )));
            }
            let mut entries = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let (ln, l) = lines
                    .next()
                    .ok_or_else(|| bad(ln, "truncated layer".into()))?;
                let f: Vec<&str> = l.split_whitespace().collect();
                let parsed = match f[..] {
                    [i, j, a] => (
                        i.parse::<usize>().ok(),
                        j.parse::<usize>().ok(),
                        a.parse::<f64>().ok(),
                    ),
                    _ => (None, None, None),
                };
                let (Some(i), Some(j), Some(a)) = parsed else {
                    return Err(bad(ln, "expected `i j score`".into()));
                };
                if i >= n || j >= n {
                    return Err(bad(ln, format!("node id out of range for n = {n}")));
                }
                if !(a >= 0.0) {
                    return Err(bad(ln, format!("negative score {a}")));
                }
                entries.push((i, j, a));
            }
            entries.sort_by_key(|e| (e.0, e.1));
            if entries
                .windows(2)
                .any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
            {
                return Err(bad(ln, "duplicate edge".into()));
            }
            let pairs: Vec<(usize, usize)> = entries.iter().map(|e| (e.0, e.1)).collect();
            let csr = Csr::from_edges(n, &pairs, false)?;
            let mut scores: Vec<f64> = entries.iter().map(|e| e.2).collect();
            renormalize(&csr, &mut scores)?;
            let types = pairs.iter().map(|&(i, j)| edge_type(graph, i, j)).collect();
            layers.push(ScoreLayer { csr, scores, types });
        }
        let s = ScoreSet { layers, meta };
        s.check_rows()?;
        Ok(s)
    }

    /// Binary layout: magic `GTSS`, u32 version, u32 metadata length, metadata
    /// JSON, u32 layer count, then per layer u64 n, u64 nnz, row pointers,
    /// column ids (u64) and scores (f64), all little-endian.
    pub fn write_binary(&self, mut w: impl Write) -> std::io::Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::other)?;
        w.write_all(b"GTSS")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.csr.n() as u64).to_le_bytes())?;
            w.write_all(&(l.csr.nnz() as u64).to_le_bytes())?;
            for &p in l.csr.row_ptr() {
                w.write_all(&(p as u64).to_le_bytes())?;
            }
            for &c in l.csr.col_idx() {
                w.write_all(&(c as u64).to_le_bytes())?;
            }
            for &a in &l.scores {
                w.write_all(&a.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read, graph: &Csr) -> Result<Self> {
        let fmt = |msg: &str| Error::Format {
            path: "<scoreset>".into(),
            line: 0,
            msg: msg.into(),
        };
        let mut buf4 = [0u8; 4];
        let mut buf8 = [0u8; 8];
        let mut u32_ = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut buf4).map_err(|_| fmt("truncated"))?;
            Ok(u32::from_le_bytes(buf4))
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated"))?;
        if &magic != b"GTSS" {
            return Err(fmt("not a binary score set"));
        }
        if u32_(&mut r)? != 1 {
            return Err(fmt("unsupported version"));
        }
        let ml = u32_(&mut r)? as usize;
        let mut meta = vec![0u8; ml];
        r.read_exact(&mut meta).map_err(|_| fmt("truncated"))?;
        let meta: ScoreMeta = serde_json::from_slice(&meta)?;
        let count = u32_(&mut r)? as usize;
        let mut u64_ = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut buf8).map_err(|_| fmt("truncated"))?;
            Ok(u64::from_le_bytes(buf8))
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let n = u64_(&mut r)? as usize;
            let nnz = u64_(&mut r)? as usize;
            if n != graph.n() {
                return Err(Error::Dimension(format!(
                    "score set has {n} nodes, graph has {}",
                    graph.n()
                )));
            }
            let row_ptr = (0..=n)
                .map(|_| u64_(&mut r).map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let cols = (0..nnz)
                .map(|_| u64_(&mut r).map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let scores = (0..nnz)
                .map(|_| u64_(&mut r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            let csr = Csr::from_parts(row_ptr, cols)?;
            let types = csr.edges().map(|(i, j)| edge_type(graph, i, j)).collect();
            layers.push(ScoreLayer { csr, scores, types });
        }
        let s = ScoreSet { layers, meta };
        s.check_rows()?;
        Ok(s)
    }
}

impl ScoreSet {
    /// The support of every layer as an attention pattern.
    pub fn pattern(&self) -> crate::graph::AttentionPattern {
        crate::graph::AttentionPattern {
            layers: self
                .layers
                .iter()
                .map(|l| crate::graph::PatternLayer {
                    csr: l.csr.clone(),
                    types: l.types.clone(),
                })
                .collect(),
        }
    }
}
