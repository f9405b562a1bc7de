use nalgebra::{DMatrix, SymmetricEigen};

use super::Csr;
use crate::error::{Error, Result};

const DENSE_LIMIT: usize = 2048;

/// Two-sided spectral gap `1 - max(λ₂, |λ_n|)` of `D^-1/2 A D^-1/2`.
/// Disconnected or bipartite graphs give 0.
pub fn spectral_gap(adj: &Csr) -> Result<f64> {
    let n = adj.n();
    if n == 0 {
        return Err(Error::Contract("spectral gap of an empty graph".into()));
    }
    if let Some(i) = (0..n).find(|&i| adj.degree(i) == 0) {
        return Err(Error::Contract(format!("node {i} is isolated")));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let lam = if n <= DENSE_LIMIT {
        dense(adj)
    } else {
        deflated_power(adj)
    };
    Ok((1.0 - lam).max(0.0))
}

fn inv_sqrt_degrees(adj: &Csr) -> Vec<f64> {
    (0..adj.n())
        .map(|i| 1.0 / (adj.degree(i) as f64).sqrt())
        .collect()
}

fn dense(adj: &Csr) -> f64 {
    let n = adj.n();
    let s = inv_sqrt_degrees(adj);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (i, j) in adj.edges() {
        m[(i, j)] = s[i] * s[j];
    }
    // symmetrize defensively so directed input still has real spectrum
    let m = (&m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[1].max(ev[n - 1].abs())
}

/// Spectral radius of the normalized adjacency with the top eigenvector
/// (∝ √deg) projected out, by power iteration on its square.
fn deflated_power(adj: &Csr) -> f64 {
    let n = adj.n();
    let s = inv_sqrt_degrees(adj);
    let mut top: Vec<f64> = (0..n).map(|i| (adj.degree(i) as f64).sqrt()).collect();
    let nt = top.iter().map(|x| x * x).sum::<f64>().sqrt();
    top.iter_mut().for_each(|x| *x /= nt);

    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = adj.row(i).iter().map(|&j| s[i] * s[j] * x[j]).sum();
        }
        let c: f64 = out.iter().zip(&top).map(|(a, b)| a * b).sum();
        out.iter_mut().zip(&top).for_each(|(o, t)| *o -= c * t);
    };

    let mut rng = crate::rng::stream(0x5eed, &[n as u64]);
    let mut x: Vec<f64> = (0..n)
        .map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5)
        .collect();
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut lam2 = 0.0;
    for _ in 0..100_000 {
        let c: f64 = x.iter().zip(&top).map(|(a, b)| a * b).sum();
        x.iter_mut().zip(&top).for_each(|(o, t)| *o -= c * t);
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        apply(&x, &mut y);
        apply(&y, &mut z);
        lam2 = x.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let resid = z
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lam2 * b).powi(2))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut x, &mut z);
        if resid < 1e-6 {
            break;
        }
    }
    lam2.max(0.0).sqrt()
}
