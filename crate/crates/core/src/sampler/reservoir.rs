use rand::Rng;

use crate::error::{Error, Result};

/// Indices picked from one row, in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sampled {
    pub indices: Vec<usize>,
    /// All weights were zero, so the draw was uniform.
    pub uniform_fallback: bool,
}

/// Weighted sampling of `k` distinct indices without replacement: each item
/// gets key `ln(u)/a` with `u ~ U(0,1)` and the `k` largest keys win.
/// Zero weights get key `-inf` (ties by lower index).
pub fn reservoir_sample(scores: &[f64], k: usize, rng: &mut impl Rng) -> Result<Sampled> {
    if scores.is_empty() {
        return Err(Error::Contract("cannot sample from an empty row".into()));
    }
    if k == 0 {
        return Err(Error::Contract("sample size must be at least 1".into()));
    }
    if let Some(bad) = scores.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::Contract(format!(
            "score {bad} is not a nonnegative number"
        )));
    }
    if k >= scores.len() {
        return Ok(Sampled {
            indices: (0..scores.len()).collect(),
            uniform_fallback: false,
        });
    }
    let fallback = scores.iter().all(|&a| a == 0.0);
    let mut keyed: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            // open interval so ln(u) is finite
            let u: f64 = loop {
                let u = rng.random::<f64>();
                if u > 0.0 {
                    break u;
                }
            };
            let w = if fallback { 1.0 } else { a };
            let key = if w > 0.0 {
                u.ln() / w
            } else {
                f64::NEG_INFINITY
            };
            (key, i)
        })
        .collect();
    keyed.select_nth_unstable_by(k - 1, |x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut indices: Vec<usize> = keyed[..k].iter().map(|e| e.1).collect();
    indices.sort_unstable();
    Ok(Sampled {
        indices,
        uniform_fallback: fallback,
    })
}

/// The `k` highest scores, ties by lower index, returned in ascending index order.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Result of truncating a row to its largest entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Prefiltered {
    pub kept: Vec<usize>,
    pub dropped_mass: f64,
    /// The tail was too heavy, so the full row was kept.
    pub flagged: bool,
}

/// Keeps the top `k_prime` scores unless the dropped mass exceeds `tail_eps`.
pub fn prefilter_topk(scores: &[f64], k_prime: usize, tail_eps: f64) -> Prefiltered {
    let all = || (0..scores.len()).collect::<Vec<_>>();
    if k_prime >= scores.len() {
        return Prefiltered {
            kept: all(),
            dropped_mass: 0.0,
            flagged: false,
        };
    }
    let kept = top_k(scores, k_prime.max(1));
    let kept_mass: f64 = kept.iter().map(|&i| scores[i]).sum();
    let dropped_mass = scores.iter().sum::<f64>() - kept_mass;
    if dropped_mass > tail_eps {
        Prefiltered {
            kept: all(),
            dropped_mass,
            flagged: true,
        }
    } else {
        Prefiltered {
            kept,
            dropped_mass,
            flagged: false,
        }
    }
}
