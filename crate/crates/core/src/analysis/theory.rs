use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Csr, PatternLayer};
use crate::numerics::Tensor;
use crate::sampler::ScoreLayer;

/// Square sparse matrix in CSR layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub csr: Csr,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(csr: Csr, values: Vec<f64>) -> Result<Self> {
        if values.len() != csr.nnz() {
            return Err(Error::Dimension(format!(
                "{} values for {} entries",
                values.len(),
                csr.nnz()
            )));
        }
        Ok(SparseMatrix { csr, values })
    }

    pub fn identity(n: usize) -> Self {
        let csr = Csr::from_parts((0..=n).collect(), (0..n).collect()).expect("identity pattern");
        SparseMatrix {
            csr,
            values: vec![1.0; n],
        }
    }

    pub fn from_layer(layer: &ScoreLayer) -> Self {
        SparseMatrix {
            csr: layer.csr.clone(),
            values: layer.scores.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.csr.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let p = self.csr.row_ptr();
        match self.csr.row(i).binary_search(&j) {
            Ok(k) => self.values[p[i] + k],
            Err(_) => 0.0,
        }
    }

    fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let p = self.csr.row_ptr();
        (0..self.n()).flat_map(move |i| {
            (p[i]..p[i + 1]).map(move |k| (i, self.csr.col_idx()[k], self.values[k]))
        })
    }

    /// Random row-stochastic matrix: each row holds itself plus `deg − 1`
    /// random other columns, weights softmax of logits drawn from
    /// U[−sharpness, sharpness]. Sharpness 0 gives uniform rows.
    pub fn random_stochastic(n: usize, deg: usize, sharpness: f64, rng: &mut ChaCha8Rng) -> Self {
        let deg = deg.clamp(1, n);
        let mut edges = Vec::with_capacity(n * deg);
        let mut weights = std::collections::BTreeMap::new();
        for i in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let picked = rand::seq::index::sample(rng, others.len(), deg - 1);
            let mut cols: Vec<usize> = picked.into_iter().map(|k| others[k]).collect();
            cols.push(i);
            others.clear();
            let logits: Vec<f64> = cols
                .iter()
                .map(|_| rng.random_range(-1.0..=1.0) * sharpness)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for (&j, l) in cols.iter().zip(&logits) {
                edges.push((i, j));
                weights.insert((i, j), (l - m).exp() / z);
            }
        }
        let csr = Csr::from_edges(n, &edges, false).expect("valid edges");
        let values = csr.edges().map(|(i, j)| weights[&(i, j)]).collect();
        SparseMatrix { csr, values }
    }
}

/// Spectral norm of the matrix given by `entries` via power iteration on
/// MᵀM, stopped at a relative residual of 1e-6.
pub fn spectral_norm(n: usize, entries: &[(usize, usize, f64)]) -> f64 {
    if entries.iter().all(|e| e.2 == 0.0) {
        return 0.0;
    }
    let apply = |v: &[f64]| {
        let mut mv = vec![0.0; n];
        for &(i, j, a) in entries {
            mv[i] += a * v[j];
        }
        let mut out = vec![0.0; n];
        for &(i, j, a) in entries {
            out[j] += a * mv[i];
        }
        out
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // a fixed, non-symmetric start avoids landing orthogonal to the top vector
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.1 * ((i * 7919 % 97) as f64 / 97.0))
        .collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let w = apply(&v);
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let resid = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let wn = norm(&w);
        if wn == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / wn).collect();
        if resid <= 1e-6 * lambda {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Outcome of one entry-sampling experiment.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SampleCheck {
    /// ‖A − B‖₂ / ‖A‖₂.
    pub rel_error: f64,
    /// Every nonzero of B is an entry of A.
    pub support_ok: bool,
    /// Nonzeros in B.
    pub sampled_entries: usize,
}

fn check_stochastic(a: &SparseMatrix) -> Result<()> {
    let p = a.csr.row_ptr();
    for i in 0..a.n() {
        let s: f64 = a.values[p[i]..p[i + 1]].iter().map(|x| x.abs()).sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("row {i} sums to {s}, expected 1")));
        }
    }
    Ok(())
}

fn sample_with(
    a: &SparseMatrix,
    probs: &SparseMatrix,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleCheck> {
    if s == 0 {
        return Err(Error::Contract("sample count must be positive".into()));
    }
    let pe: Vec<(usize, usize, f64)> = probs.entries().collect();
    let total: f64 = pe.iter().map(|e| e.2.abs()).sum();
    let dist = WeightedIndex::new(pe.iter().map(|e| e.2.abs()))
        .map_err(|e| Error::Contract(format!("bad sampling weights: {e}")))?;
    let mut counts = vec![0usize; pe.len()];
    for _ in 0..s {
        counts[dist.sample(rng)] += 1;
    }
    let mut b = std::collections::BTreeMap::new();
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (i, j, w) = pe[k];
        let aij = a.get(i, j);
        let p = w.abs() / total;
        let val = aij / p * c as f64 / s as f64;
        if val != 0.0 {
            b.insert((i, j), val);
        }
    }
    let support_ok = b.keys().all(|&(i, j)| a.csr.contains(i, j));
    let mut diff: Vec<(usize, usize, f64)> = a
        .entries()
        .map(|(i, j, v)| (i, j, v - b.get(&(i, j)).copied().unwrap_or(0.0)))
        .collect();
    diff.extend(
        b.iter()
            .filter(|(k, _)| !a.csr.contains(k.0, k.1))
            .map(|(k, &v)| (k.0, k.1, -v)),
    );
    let a_entries: Vec<_> = a.entries().collect();
    let rel_error = spectral_norm(a.n(), &diff) / spectral_norm(a.n(), &a_entries);
    Ok(SampleCheck {
        rel_error,
        support_ok,
        sampled_entries: b.len(),
    })
}

/// Samples `s` entries of the row-stochastic `a` with p_ij = |A_ij|/n,
/// forms B as the average of the rescaled samples and reports the relative
/// spectral error.
pub fn spectral_sample_check(
    a: &SparseMatrix,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleCheck> {
    check_stochastic(a)?;
    sample_with(a, a, s, rng)
}

/// Like [`spectral_sample_check`] but draws entries by the values of
/// `a_prime`, which must satisfy A′_ij ≥ A_ij/α on the support of A.
pub fn noisy_sampling_check(
    a: &SparseMatrix,
    a_prime: &SparseMatrix,
    alpha: f64,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleCheck> {
    if !(alpha >= 1.0) {
        return Err(Error::Contract(format!(
            "alpha must be at least 1, got {alpha}"
        )));
    }
    if a.n() != a_prime.n() {
        return Err(Error::Dimension("A and A′ differ in size".into()));
    }
    check_stochastic(a)?;
    check_stochastic(a_prime)?;
    for (i, j, v) in a.entries() {
        let w = a_prime.get(i, j).abs();
        if v != 0.0 && w * alpha < v.abs() * (1.0 - 1e-12) {
            return Err(Error::Contract(format!(
                "A′[{i},{j}] = {w} is below A[{i},{j}]/alpha = {}",
                v.abs() / alpha
            )));
        }
    }
    sample_with(a, a_prime, s, rng)
}

/// Smallest α with A′ ≥ A/α on the support of A.
pub fn underestimate_ratio(a: &SparseMatrix, a_prime: &SparseMatrix) -> f64 {
    a.entries()
        .filter(|e| e.2 != 0.0)
        .map(|(i, j, v)| v.abs() / a_prime.get(i, j).abs())
        .fold(1.0, f64::max)
}

/// Sign projection d×D with entries ±1/√d.
pub fn sign_projection(d: usize, big_d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = 1.0 / (d as f64).sqrt();
    let data = (0..d * big_d)
        .map(|_| if rng.random::<bool>() { s } else { -s })
        .collect();
    Tensor::new(&[d, big_d], data).expect("shape matches")
}

fn project(x: &Tensor<f64>, m: &Tensor<f64>) -> Tensor<f64> {
    let (n, big_d) = (x.shape()[0], x.shape()[1]);
    let d = m.shape()[0];
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let xi = &x.data()[i * big_d..(i + 1) * big_d];
        for r in 0..d {
            let mr = &m.data()[r * big_d..(r + 1) * big_d];
            out[i * d + r] = xi.iter().zip(mr).map(|(a, b)| a * b).sum();
        }
    }
    Tensor::new(&[n, d], out).expect("shape matches")
}

fn softmax_scores(q: &Tensor<f64>, k: &Tensor<f64>, layer: &PatternLayer) -> Vec<f64> {
    let dim = q.shape()[1];
    let mut out = Vec::with_capacity(layer.csr.nnz());
    for i in 0..layer.csr.n() {
        let qi = &q.data()[i * dim..(i + 1) * dim];
        let logits: Vec<f64> = layer
            .csr
            .row(i)
            .iter()
            .map(|&j| {
                qi.iter()
                    .zip(&k.data()[j * dim..(j + 1) * dim])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        out.extend(logits.iter().map(|l| (l - m).exp() / z));
    }
    out
}

/// max |â/a − 1| over the edges of `layer`, where â uses the projected
/// rows MQᵢ, MKⱼ.
pub fn jlt_deviation(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    layer: &PatternLayer,
    m: &Tensor<f64>,
) -> Result<f64> {
    if q.shape() != k.shape() || q.shape().len() != 2 || q.shape()[0] != layer.csr.n() {
        return Err(Error::Dimension("Q and K must both be n×D".into()));
    }
    if m.shape().len() != 2 || m.shape()[1] != q.shape()[1] {
        return Err(Error::Dimension("projection must be d×D".into()));
    }
    let a = softmax_scores(q, k, layer);
    let a_hat = softmax_scores(&project(q, m), &project(k, m), layer);
    Ok(a.iter()
        .zip(&a_hat)
        .map(|(x, y)| (y / x - 1.0).abs())
        .fold(0.0, f64::max))
}

/// Deviation of `trials` independent sign projections to dimension `d`.
/// Trial t draws its projection from stream `[t]` of `seed`.
pub fn jlt_compress_check(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    layer: &PatternLayer,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let big_d = q.shape().get(1).copied().unwrap_or(0);
    if !(d >= 1 && d < big_d) {
        return Err(Error::Contract(format!(
            "target dimension must be in [1, {big_d}), got {d}"
        )));
    }
    (0..trials)
        .map(|t| {
            let mut rng = crate::rng::stream(seed, &[t as u64]);
            jlt_deviation(q, k, layer, &sign_projection(d, big_d, &mut rng))
        })
        .collect()
}

/// n random unit-norm rows of dimension `dim`.
pub fn random_unit_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let normal = rand_distr::StandardNormal;
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let row: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(normal)).collect();
        let s = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(row.into_iter().map(|x| x / s));
    }
    Tensor::new(&[n, dim], data).expect("shape matches")
}
