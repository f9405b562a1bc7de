use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{spectral_gap, Csr};
use crate::error::{Error, Result};
use crate::rng;

/// Union of Hamiltonian cycles, collapsed to a simple symmetric graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpanderGraph {
    pub n: usize,
    pub seed: u64,
    pub cycles: Vec<Vec<usize>>,
    pub gap: f64,
    adjacency: Csr,
}

#[derive(Serialize, Deserialize)]
struct ExpanderFile {
    n: usize,
    seed: u64,
    cycles: Vec<Vec<usize>>,
    gap: f64,
}

fn cycle_union(n: usize, cycles: &[Vec<usize>]) -> Result<Csr> {
    let mut edges = Vec::with_capacity(cycles.len() * n);
    for c in cycles {
        let mut seen = vec![false; n];
        if c.len() != n
            || c.iter()
                .any(|&v| v >= n || std::mem::replace(&mut seen[v], true))
        {
            return Err(Error::Contract(format!(
                "cycle is not a permutation of 0..{n}"
            )));
        }
        edges.extend((0..n).map(|k| (c[k], c[(k + 1) % n])));
    }
    Csr::from_edges(n, &edges, true)
}

impl ExpanderGraph {
    /// Expander with no edges, for patterns built from the input graph alone.
    pub fn empty(n: usize) -> Self {
        ExpanderGraph {
            n,
            seed: 0,
            cycles: Vec::new(),
            gap: 0.0,
            adjacency: Csr::empty(n),
        }
    }

    pub fn from_cycles(n: usize, seed: u64, cycles: Vec<Vec<usize>>) -> Result<Self> {
        let adjacency = cycle_union(n, &cycles)?;
        let gap = if cycles.is_empty() {
            0.0
        } else {
            spectral_gap(&adjacency)?
        };
        Ok(ExpanderGraph {
            n,
            seed,
            cycles,
            gap,
            adjacency,
        })
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn degree(&self) -> usize {
        2 * self.cycles.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = ExpanderFile {
            n: self.n,
            seed: self.seed,
            cycles: self.cycles.clone(),
            gap: self.gap,
        };
        std::fs::write(path, serde_json::to_string(&f)?).map_err(|e| Error::io(path, e))
    }

    /// Loads and re-validates the cycles. The stored gap is kept as written.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ExpanderFile = serde_json::from_str(&text)?;
        let adjacency = cycle_union(f.n, &f.cycles)?;
        Ok(ExpanderGraph {
            n: f.n,
            seed: f.seed,
            cycles: f.cycles,
            gap: f.gap,
            adjacency,
        })
    }
}

fn random_cycles(n: usize, num_cycles: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng::stream(seed, &[]);
    (0..num_cycles)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect()
}

/// Smallest accepted two-sided spectral gap unless configured otherwise.
pub const DEFAULT_MIN_GAP: f64 = 0.05;
/// Extra construction attempts unless configured otherwise.
pub const DEFAULT_MAX_RETRIES: usize = 20;

/// Draws `num_cycles` random Hamiltonian cycles until the union has a
/// two-sided gap of at least `min_gap`. Attempt `a` uses sub-seed `(seed, a)`;
/// up to `max_retries` retries follow the first attempt.
pub fn build_expander(
    n: usize,
    num_cycles: usize,
    min_gap: f64,
    max_retries: usize,
    seed: u64,
) -> Result<ExpanderGraph> {
    if n < 3 {
        return Err(Error::Contract(format!("expander needs n >= 3, got {n}")));
    }
    if num_cycles == 0 {
        return Err(Error::Contract("expander needs at least one cycle".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for attempt in 0..=max_retries {
        let cycles = random_cycles(n, num_cycles, rng::derive_seed(seed, &[attempt as u64]));
        let x = ExpanderGraph::from_cycles(n, seed, cycles)?;
        if x.gap >= min_gap {
            return Ok(x);
        }
        best = best.max(x.gap);
    }
    Err(Error::Construction {
        attempts: max_retries + 1,
        best_gap: best,
        min_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cycle_is_two_regular() {
        let x = build_expander(6, 1, 0.0, 0, 1).unwrap();
        assert!((0..6).all(|i| x.adjacency().degree(i) == 2));
        assert_eq!(x.degree(), 2);
    }

    #[test]
    fn single_even_cycle_never_meets_positive_gap() {
        match build_expander(6, 1, 0.01, 5, 3) {
            Err(Error::Construction {
                attempts, best_gap, ..
            }) => {
                assert_eq!(attempts, 6);
                assert!(best_gap.abs() < 1e-12);
            }
            other => panic!("expected construction failure, got {other:?}"),
        }
    }

    #[test]
    fn three_cycles_on_101_nodes() {
        let x = build_expander(101, 3, 0.05, 10, 42).unwrap();
        assert!(x.gap >= 0.05);
        assert!((0..101).all(|i| x.adjacency().degree(i) <= 6));
        let g = spectral_gap(x.adjacency()).unwrap();
        assert_eq!(g, x.gap);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = build_expander(50, 2, 0.05, 10, 9).unwrap();
        let b = build_expander(50, 2, 0.05, 10, 9).unwrap();
        let c = build_expander(50, 2, 0.05, 10, 10).unwrap();
        assert_eq!(a.cycles, b.cycles);
        assert_ne!(a.cycles, c.cycles);
    }

    #[test]
    fn json_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.json");
        let x = build_expander(20, 2, 0.0, 0, 5).unwrap();
        x.save(&p).unwrap();
        assert_eq!(ExpanderGraph::load(&p).unwrap(), x);
        std::fs::write(&p, r#"{"n":3,"seed":0,"cycles":[[0,0,1]],"gap":0.0}"#).unwrap();
        assert!(ExpanderGraph::load(&p).is_err());
    }

    #[test]
    fn gap_exceeds_threshold_for_most_seeds() {
        let mut rng = crate::rng::stream(77, &[]);
        let mut ok = 0;
        for s in 0..100u64 {
            let n = rand::Rng::random_range(&mut rng, 50..=500);
            let x = build_expander(n, 2, 0.0, 0, s).unwrap();
            if x.gap > 0.05 {
                ok += 1;
            }
        }
        assert!(ok >= 95, "{ok}/100 seeds exceeded the gap threshold");
    }
}
