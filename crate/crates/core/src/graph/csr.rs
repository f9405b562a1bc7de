use crate::error::{Error, Result};

/// Compressed sparse row adjacency. Rows are sorted and free of duplicates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Csr {
    /// Builds a CSR from directed edges, optionally adding reverse edges.
    /// Duplicates are collapsed. Self-edges are kept if present.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], symmetrize: bool) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * if symmetrize { 2 } else { 1 });
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Dimension(format!(
                    "edge ({u}, {v}) outside {n} nodes"
                )));
            }
            pairs.push((u, v));
            if symmetrize && u != v {
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut row_ptr = vec![0usize; n + 1];
        for &(u, _) in &pairs {
            row_ptr[u + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Csr {
            row_ptr,
            col_idx: pairs.into_iter().map(|(_, v)| v).collect(),
        })
    }

    /// Validates raw arrays against the CSR invariants.
    pub fn from_parts(row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Result<Self> {
        let csr = Csr { row_ptr, col_idx };
        csr.check()?;
        Ok(csr)
    }

    pub fn empty(n: usize) -> Self {
        Csr {
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n();
        if self.row_ptr.is_empty() || self.row_ptr[0] != 0 {
            return Err(Error::Dimension("row_ptr must start at 0".into()));
        }
        if *self.row_ptr.last().unwrap() != self.col_idx.len() {
            return Err(Error::Dimension("row_ptr[n] must equal edge count".into()));
        }
        for i in 0..n {
            if self.row_ptr[i] > self.row_ptr[i + 1] {
                return Err(Error::Dimension(format!("row_ptr decreases at {i}")));
            }
            let row = self.row(i);
            if row.iter().any(|&c| c >= n) {
                return Err(Error::Dimension(format!(
                    "row {i} has a column out of range"
                )));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Dimension(format!(
                    "row {i} is not strictly increasing"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(i, j)| self.contains(j, i))
    }

    /// Connected components of the graph viewed as undirected.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (i, j) in self.edges() {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        (0..n)
            .map(|i| {
                let r = find(&mut parent, i);
                if label[r] == usize::MAX {
                    label[r] = next;
                    next += 1;
                }
                label[r]
            })
            .collect()
    }
}
