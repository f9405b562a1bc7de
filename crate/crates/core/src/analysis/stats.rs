use std::cmp::Ordering;

use crate::error::{Error, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_cross(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        for y in ys {
            s += dist(x, y);
        }
    }
    s / (xs.len() * ys.len()) as f64
}

fn mean_within(xs: &[Vec<f64>]) -> f64 {
    let n = xs.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += dist(&xs[i], &xs[j]);
        }
    }
    2.0 * s / (n * (n - 1)) as f64
}

fn cmp_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Unbiased estimate of `2E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖`. Can be slightly
/// negative. Symmetric in its arguments bit for bit.
pub fn energy_distance(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Contract(
            "energy distance needs at least two samples per side".into(),
        ));
    }
    let dim = xs[0].len();
    if xs.iter().chain(ys).any(|v| v.len() != dim) {
        return Err(Error::Dimension("samples have different dimensions".into()));
    }
    let (a, b) = if cmp_sets(xs, ys) == Ordering::Greater {
        (ys, xs)
    } else {
        (xs, ys)
    };
    Ok(2.0 * mean_cross(a, b) - (mean_within(a) + mean_within(b)))
}

/// Natural-log entropy with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_point_masses() {
        let xs = vec![vec![0.3, 0.7]; 5];
        assert!(energy_distance(&xs, &xs).unwrap().abs() < 1e-10);
    }

    #[test]
    fn opposite_point_masses() {
        let xs = vec![vec![1.0, 0.0]; 3];
        let ys = vec![vec![0.0, 1.0]; 4];
        assert!((energy_distance(&xs, &ys).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_symmetry() {
        let mut r = crate::rng::stream(1, &[]);
        let xs: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rand::Rng::random::<f64>(&mut r)).collect())
            .collect();
        let ys: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..3).map(|_| rand::Rng::random::<f64>(&mut r)).collect())
            .collect();
        assert_eq!(
            energy_distance(&xs, &ys).unwrap().to_bits(),
            energy_distance(&ys, &xs).unwrap().to_bits()
        );
        let zs: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        assert_eq!(
            energy_distance(&xs, &zs).unwrap().to_bits(),
            energy_distance(&zs, &xs).unwrap().to_bits()
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(energy_distance(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(
            energy_distance(&[vec![1.0], vec![2.0]], &[vec![1.0, 0.0], vec![2.0, 0.0]]).is_err()
        );
    }

    fn normal_cdf_table(mu: f64, lo: f64, step: f64, n: usize) -> Vec<f64> {
        // cumulative Simpson-free trapezoid on a fine grid
        let pdf = |x: f64| (-(x - mu) * (x - mu) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut out = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut prev = pdf(lo);
        out.push(0.0);
        for i in 1..n {
            let cur = pdf(lo + i as f64 * step);
            acc += 0.5 * (prev + cur) * step;
            out.push(acc);
            prev = cur;
        }
        out
    }

    #[test]
    fn gaussians_match_cdf_integral() {
        let (lo, step, n) = (-12.0, 1e-3, 26_000);
        let f = normal_cdf_table(0.0, lo, step, n);
        let g = normal_cdf_table(1.0, lo, step, n);
        let oracle: f64 = 2.0
            * f.iter()
                .zip(&g)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
            * step;
        let mut r = crate::rng::stream(2, &[]);
        let nx = Normal::new(0.0, 1.0).unwrap();
        let ny = Normal::new(1.0, 1.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..10_000).map(|_| vec![nx.sample(&mut r)]).collect();
        let ys: Vec<Vec<f64>> = (0..10_000).map(|_| vec![ny.sample(&mut r)]).collect();
        let est = energy_distance(&xs, &ys).unwrap();
        assert!((est - oracle).abs() < 0.02 * oracle, "{est} vs {oracle}");
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.25, 0.25]) - 1.0397207708399179).abs() < 1e-12);
    }

    #[test]
    fn quantiles_and_slope() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert!((slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
    }
}
