use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{AttentionPattern, Graph};
use crate::pipeline::{train_estimator, TrainConfig};
use crate::rng;
use crate::sampler::ScoreSet;

use super::stats::energy_distance;

/// Settings of a consistency study.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    pub widths: Vec<usize>,
    pub runs_per_width: usize,
    pub reference_width: usize,
    /// Estimator settings shared by all runs; width and seed are overridden.
    pub base: TrainConfig,
    pub seed: u64,
    /// Worker threads for the training runs; results do not depend on it.
    pub threads: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            widths: vec![4, 8, 16, 32],
            runs_per_width: 10,
            reference_width: 32,
            base: TrainConfig::estimator(),
            seed: 0,
            threads: 1,
        }
    }
}

/// Distances of one (node, layer) cell to the reference runs. `by_width`
/// follows the order of `ConsistencyReport::widths`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Cell {
    pub node: usize,
    pub layer: usize,
    pub by_width: Vec<f64>,
    pub uniform: f64,
    pub random: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ConsistencyReport {
    pub widths: Vec<usize>,
    pub reference_width: usize,
    pub cells: Vec<Cell>,
    /// Per layer: mean per width, then uniform, then random.
    pub per_layer: Vec<Vec<f64>>,
    /// Same columns pooled over all cells.
    pub pooled: Vec<f64>,
}

impl ConsistencyReport {
    /// Column labels of `per_layer` and `pooled`.
    pub fn labels(&self) -> Vec<String> {
        let mut v: Vec<String> = self.widths.iter().map(|w| format!("width_{w}")).collect();
        v.push("uniform".into());
        v.push("random".into());
        v
    }

    /// Fraction of cells where width `w` is strictly closer to the
    /// reference than both baselines.
    pub fn fraction_beating_baselines(&self, w: usize) -> Option<f64> {
        let c = self.widths.iter().position(|&x| x == w)?;
        let wins = self
            .cells
            .iter()
            .filter(|cell| cell.by_width[c] < cell.random && cell.by_width[c] < cell.uniform)
            .count();
        Some(wins as f64 / self.cells.len().max(1) as f64)
    }
}

/// Trains `runs_per_width` estimators for every width and compares them.
/// Run r of width w uses seed `derive_seed(seed, [w, r])`.
pub fn consistency_study(
    g: &Graph,
    pattern: &AttentionPattern,
    cfg: &ConsistencyConfig,
) -> Result<ConsistencyReport> {
    if !cfg.widths.contains(&cfg.reference_width) {
        return Err(Error::Config(format!(
            "reference width {} is not among the widths",
            cfg.reference_width
        )));
    }
    let jobs: Vec<(usize, usize)> = cfg
        .widths
        .iter()
        .flat_map(|&w| (0..cfg.runs_per_width).map(move |r| (w, r)))
        .collect();
    let train = |&(w, r): &(usize, usize)| -> Result<ScoreSet> {
        let run_cfg = TrainConfig {
            width: w,
            seed: rng::derive_seed(cfg.seed, &[w as u64, r as u64]),
            ..cfg.base.clone()
        };
        Ok(train_estimator(g, pattern, &run_cfg)?.scores)
    };
    let threads = cfg.threads.clamp(1, jobs.len().max(1));
    let mut results: Vec<Option<Result<ScoreSet>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let (jobs, train) = (&jobs, &train);
                scope.spawn(move || {
                    (t..jobs.len())
                        .step_by(threads)
                        .map(|k| (k, train(&jobs[k])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (k, res) in h.join().expect("training thread panicked") {
                results[k] = Some(res);
            }
        }
    });
    let mut runs: BTreeMap<usize, Vec<ScoreSet>> = BTreeMap::new();
    for (&(w, _), res) in jobs.iter().zip(results) {
        runs.entry(w)
            .or_default()
            .push(res.expect("every job ran")?);
    }
    compare_runs(&runs, cfg.reference_width, cfg.seed)
}

fn row(s: &ScoreSet, l: usize, i: usize) -> Vec<f64> {
    s.layers[l].row(i).1.to_vec()
}

fn random_row(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let logits: Vec<f64> = (0..len).map(|_| rng.random_range(-8.0..=8.0)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits.iter().map(|l| (l - m).exp() / z).collect()
}

/// Compares existing score sets against the reference width. The reference
/// is compared with itself through disjoint halves of its runs. Baselines
/// carry as many samples as there are reference runs; random rows for cell
/// (layer l, node i) come from stream `[l, i]` of `seed`.
pub fn compare_runs(
    runs: &BTreeMap<usize, Vec<ScoreSet>>,
    reference_width: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    let reference = runs
        .get(&reference_width)
        .ok_or_else(|| Error::Config(format!("no runs at reference width {reference_width}")))?;
    if reference.len() < 4 {
        return Err(Error::Config(
            "the reference needs at least four runs".into(),
        ));
    }
    let first = &reference[0];
    for sets in runs.values() {
        if sets.len() < 2 {
            return Err(Error::Config("every width needs at least two runs".into()));
        }
        for s in sets {
            if s.num_layers() != first.num_layers()
                || s.layers
                    .iter()
                    .zip(&first.layers)
                    .any(|(a, b)| a.csr != b.csr)
            {
                return Err(Error::Contract(
                    "score sets do not share their support".into(),
                ));
            }
        }
    }
    let widths: Vec<usize> = runs.keys().copied().collect();
    let half = reference.len() / 2;
    let mut cells = Vec::new();
    for l in 0..first.num_layers() {
        for i in 0..first.n() {
            let refs: Vec<Vec<f64>> = reference.iter().map(|s| row(s, l, i)).collect();
            let len = refs[0].len();
            let mut by_width = Vec::with_capacity(widths.len());
            for &w in &widths {
                let d = if w == reference_width {
                    energy_distance(&refs[..half], &refs[half..])?
                } else {
                    let xs: Vec<Vec<f64>> = runs[&w].iter().map(|s| row(s, l, i)).collect();
                    energy_distance(&xs, &refs)?
                };
                by_width.push(d);
            }
            let uniform = vec![vec![1.0 / len as f64; len]; refs.len()];
            let mut r = rng::stream(seed, &[l as u64, i as u64]);
            let random: Vec<Vec<f64>> = (0..refs.len()).map(|_| random_row(len, &mut r)).collect();
            cells.push(Cell {
                node: i,
                layer: l + 1,
                by_width,
                uniform: energy_distance(&uniform, &refs)?,
                random: energy_distance(&random, &refs)?,
            });
        }
    }
    let cols = widths.len() + 2;
    let values = |c: &Cell| {
        let mut v = c.by_width.clone();
        v.push(c.uniform);
        v.push(c.random);
        v
    };
    let mean_of = |it: &mut dyn Iterator<Item = &Cell>| {
        let mut acc = vec![0.0; cols];
        let mut n = 0usize;
        for c in it {
            acc.iter_mut().zip(values(c)).for_each(|(a, v)| *a += v);
            n += 1;
        }
        acc.into_iter()
            .map(|a| a / n.max(1) as f64)
            .collect::<Vec<f64>>()
    };
    let per_layer = (1..=first.num_layers())
        .map(|l| mean_of(&mut cells.iter().filter(|c| c.layer == l)))
        .collect();
    let pooled = mean_of(&mut cells.iter());
    Ok(ConsistencyReport {
        widths,
        reference_width,
        cells,
        per_layer,
        pooled,
    })
}
