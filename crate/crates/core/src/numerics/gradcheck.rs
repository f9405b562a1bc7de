//! Central finite differences, used as an oracle for the tape.

use super::tensor::Tensor;

/// Numerical gradient of `f` w.r.t. every entry of every tensor in `params`.
pub fn finite_difference<F>(params: &[Tensor<f64>], f: F, h: f64) -> Vec<Tensor<f64>>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = f(&work);
            work[p].data_mut()[i] = orig - h;
            let down = f(&work);
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over all entries.
pub fn max_relative_error(a: &[Tensor<f64>], b: &[Tensor<f64>], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
