//! Graphs, expander overlays and attention patterns.

mod csr;
mod expander;
mod io;
mod pattern;
mod spectral;

pub use csr::Csr;
pub use expander::{build_expander, ExpanderGraph, DEFAULT_MAX_RETRIES, DEFAULT_MIN_GAP};
pub use io::{load_graph, load_graph_dir, load_split, write_graph_dir, GraphFiles};
pub use pattern::{augment, augment_csr, AttentionPattern, EdgeType, PatternLayer};
pub use spectral::spectral_gap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// One class id per node.
    Classes { ids: Vec<usize>, num_classes: usize },
    /// Per-node bitmask over `width` binary labels.
    MultiLabel { bits: Vec<u64>, width: usize },
}

impl Labels {
    pub fn classes(ids: Vec<usize>) -> Self {
        let num_classes = ids.iter().copied().max().map_or(0, |m| m + 1);
        Labels::Classes { ids, num_classes }
    }

    /// Class ids with an explicit class count (some classes may be absent).
    pub fn classes_with(ids: Vec<usize>, num_classes: usize) -> Self {
        Labels::Classes { ids, num_classes }
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { ids, .. } => ids.len(),
            Labels::MultiLabel { bits, .. } => bits.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of the network output layer.
    pub fn output_dim(&self) -> usize {
        match self {
            Labels::Classes { num_classes, .. } => *num_classes,
            Labels::MultiLabel { width, .. } => *width,
        }
    }
}

/// Immutable input graph with node data.
#[derive(Clone, Debug)]
pub struct Graph {
    pub adjacency: Csr,
    pub features: Tensor<f64>,
    pub labels: Labels,
    pub split: Vec<Split>,
}

impl Graph {
    pub fn new(
        adjacency: Csr,
        features: Tensor<f64>,
        labels: Labels,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = adjacency.n();
        let (rows, _) = features.dims2()?;
        if rows != n {
            return Err(Error::Dimension(format!(
                "features have {rows} rows, graph has {n} nodes"
            )));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if split.len() != n {
            return Err(Error::Dimension(format!(
                "{} split tags for {n} nodes",
                split.len()
            )));
        }
        Ok(Graph {
            adjacency,
            features,
            labels,
            split,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn num_features(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn nodes_in(&self, s: Split) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.split[i] == s).collect()
    }
}
