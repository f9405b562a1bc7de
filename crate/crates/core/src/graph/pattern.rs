use std::fmt::Write as _;
use std::path::Path;

use super::{Csr, ExpanderGraph, Graph};
use crate::error::{Error, Result};

/// Origin of an attention edge. The discriminant indexes the edge-type embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum EdgeType {
    Graph = 0,
    Expander = 1,
    SelfLoop = 2,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::Graph, EdgeType::Expander, EdgeType::SelfLoop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Graph => "graph",
            EdgeType::Expander => "expander",
            EdgeType::SelfLoop => "self",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        EdgeType::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// One layer of an attention pattern: CSR of keys per query with a type per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternLayer {
    pub csr: Csr,
    pub types: Vec<EdgeType>,
}

impl PatternLayer {
    /// Every query attends to every key, itself through a self loop.
    pub fn complete(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let csr = Csr::from_edges(n, &edges, false).expect("complete edge list is valid");
        let types = csr
            .edges()
            .map(|(i, j)| {
                if i == j {
                    EdgeType::SelfLoop
                } else {
                    EdgeType::Graph
                }
            })
            .collect();
        PatternLayer { csr, types }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[EdgeType]) {
        let p = self.csr.row_ptr();
        (self.csr.row(i), &self.types[p[i]..p[i + 1]])
    }

    pub fn edge_type(&self, i: usize, j: usize) -> Option<EdgeType> {
        let (cols, types) = self.row(i);
        cols.binary_search(&j).ok().map(|k| types[k])
    }

    pub fn max_degree(&self) -> usize {
        (0..self.csr.n())
            .map(|i| self.csr.degree(i))
            .max()
            .unwrap_or(0)
    }
}

/// Per-layer typed attention edges.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPattern {
    pub layers: Vec<PatternLayer>,
}

impl AttentionPattern {
    pub fn n(&self) -> usize {
        self.layers.first().map_or(0, |l| l.csr.n())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Directed edge count of the first layer.
    pub fn m_aug(&self) -> usize {
        self.layers.first().map_or(0, |l| l.csr.nnz())
    }

    /// Text layout: `# layers L n`, then per layer a `layer ℓ nnz` line and
    /// `i<TAB>j<TAB>type` rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# layers {} {}", self.num_layers(), self.n());
        for (l, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {} {}", l + 1, layer.csr.nnz());
            for ((i, j), t) in layer.csr.edges().zip(&layer.types) {
                let _ = writeln!(s, "{i}\t{j}\t{}", t.name());
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: &str| Error::Format {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, head) = lines.next().ok_or_else(|| bad(1, "empty pattern file"))?;
        let h: Vec<usize> = head
            .strip_prefix("# layers ")
            .ok_or_else(|| bad(1, "missing `# layers` header"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(1, "bad header")))
            .collect::<Result<_>>()?;
        let [num_layers, n] = h[..] else {
            return Err(bad(1, "bad header"));
        };
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            let (ln, lh) = lines
                .next()
                .ok_or_else(|| bad(0, "truncated pattern file"))?;
            let nnz: usize = lh
                .split_whitespace()
                .nth(2)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad(ln, "bad layer header"))?;
            let mut edges = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let (ln, l) = lines.next().ok_or_else(|| bad(ln, "truncated layer"))?;
                let f: Vec<&str> = l.split('\t').collect();
                let (Some(i), Some(j), Some(t)) = (
                    f.first().and_then(|s| s.parse::<usize>().ok()),
                    f.get(1).and_then(|s| s.parse::<usize>().ok()),
                    f.get(2).and_then(|s| EdgeType::parse(s)),
                ) else {
                    return Err(bad(ln, "expected `i<TAB>j<TAB>type`"));
                };
                if i >= n || j >= n {
                    return Err(bad(ln, "node id out of range"));
                }
                edges.push(((i, j), t));
            }
            edges.sort_by_key(|e| e.0);
            if edges.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(bad(ln, "duplicate edge in layer"));
            }
            let pairs: Vec<_> = edges.iter().map(|e| e.0).collect();
            let csr = Csr::from_edges(n, &pairs, false)?;
            layers.push(PatternLayer {
                csr,
                types: edges.into_iter().map(|e| e.1).collect(),
            });
        }
        Ok(AttentionPattern { layers })
    }
}

/// Builds the augmented pattern: graph edges, expander edges and one
/// self-loop per node, each pair tagged by the first matching source in
/// that order. All `layers` layers are identical.
pub fn augment(g: &Graph, x: &ExpanderGraph, layers: usize) -> Result<AttentionPattern> {
    augment_csr(&g.adjacency, x, layers)
}

/// [`augment`] over a bare adjacency.
pub fn augment_csr(adj: &Csr, x: &ExpanderGraph, layers: usize) -> Result<AttentionPattern> {
    let n = adj.n();
    if x.n != n {
        return Err(Error::Dimension(format!(
            "graph has {n} nodes, expander has {}",
            x.n
        )));
    }
    if layers == 0 {
        return Err(Error::Contract("pattern needs at least one layer".into()));
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut types = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let mut row: Vec<(usize, EdgeType)> = adj
            .row(i)
            .iter()
            .map(|&j| (j, EdgeType::Graph))
            .chain(
                x.adjacency()
                    .row(i)
                    .iter()
                    .map(|&j| (j, EdgeType::Expander)),
            )
            .chain(std::iter::once((i, EdgeType::SelfLoop)))
            .collect();
        // stable sort keeps the priority order among equal columns
        row.sort_by_key(|e| (e.0, e.1));
        row.dedup_by_key(|e| e.0);
        for (j, t) in row {
            cols.push(j);
            types.push(t);
        }
        row_ptr.push(cols.len());
    }
    let layer = PatternLayer {
        csr: Csr::from_parts(row_ptr, cols)?,
        types,
    };
    Ok(AttentionPattern {
        layers: vec![layer; layers],
    })
}
