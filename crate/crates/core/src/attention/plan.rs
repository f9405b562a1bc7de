use crate::error::{Error, Result};
use crate::graph::{AttentionPattern, EdgeType, PatternLayer};

/// Input of one fixed-degree attention layer.
///
/// `nodes` lists the global ids of the rows fed into the layer; the first
/// `num_queries` of them are the queries whose outputs the layer produces.
/// Every query owns `deg` key slots given as local indices into `nodes`.
/// Masked-out slots point at the query itself.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedLayer {
    pub nodes: Vec<usize>,
    pub num_queries: usize,
    pub deg: usize,
    pub keys: Vec<usize>,
    pub types: Vec<EdgeType>,
    pub mask: Vec<bool>,
}

impl FixedLayer {
    /// All nodes as queries, padded to the layer's maximum degree.
    pub fn full(layer: &PatternLayer) -> Self {
        let n = layer.csr.n();
        let deg = layer.max_degree().max(1);
        let mut keys = Vec::with_capacity(n * deg);
        let mut types = Vec::with_capacity(n * deg);
        let mut mask = Vec::with_capacity(n * deg);
        for i in 0..n {
            let (cols, ts) = layer.row(i);
            keys.extend_from_slice(cols);
            types.extend_from_slice(ts);
            mask.extend(std::iter::repeat_n(true, cols.len()));
            for _ in cols.len()..deg {
                keys.push(i);
                types.push(EdgeType::SelfLoop);
                mask.push(false);
            }
        }
        FixedLayer {
            nodes: (0..n).collect(),
            num_queries: n,
            deg,
            keys,
            types,
            mask,
        }
    }

    pub fn queries(&self) -> &[usize] {
        &self.nodes[..self.num_queries]
    }

    /// Global ids of the unmasked keys of query `q`, with their slot positions.
    pub fn row_keys(&self, q: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.deg).filter_map(move |s| {
            let k = q * self.deg + s;
            self.mask[k].then(|| (s, self.nodes[self.keys[k]]))
        })
    }

    pub fn check(&self) -> Result<()> {
        let slots = self.num_queries * self.deg;
        if self.num_queries > self.nodes.len()
            || self.keys.len() != slots
            || self.types.len() != slots
            || self.mask.len() != slots
        {
            return Err(Error::Shape("fixed-degree layer arrays disagree".into()));
        }
        if self.keys.iter().any(|&k| k >= self.nodes.len()) {
            return Err(Error::Contract("key index outside layer node set".into()));
        }
        for q in 0..self.num_queries {
            if !self.mask[q * self.deg..(q + 1) * self.deg]
                .iter()
                .any(|&m| m)
            {
                return Err(Error::Contract(format!(
                    "query {} has no keys",
                    self.nodes[q]
                )));
            }
        }
        Ok(())
    }
}

/// Unsampled plan over the whole pattern.
pub fn full_plan(pattern: &AttentionPattern) -> Vec<FixedLayer> {
    pattern.layers.iter().map(FixedLayer::full).collect()
}

/// Checks each layer and that every layer's queries feed the next layer.
pub fn check_plan(plan: &[FixedLayer]) -> Result<()> {
    if plan.is_empty() {
        return Err(Error::Contract("plan has no layers".into()));
    }
    for l in plan {
        l.check()?;
    }
    for w in plan.windows(2) {
        if w[0].queries() != w[1].nodes.as_slice() {
            return Err(Error::Contract(
                "layer queries do not match next layer inputs".into(),
            ));
        }
    }
    Ok(())
}
