use rand::{Rng, SeedableRng};

use super::gradcheck::{finite_difference, max_relative_error};
use super::*;
use crate::error::Result;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks autodiff against central differences for a loss built from leaves.
fn check<F>(params: Vec<Tensor<f64>>, build: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |ps: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&tape, &vars).unwrap();
        let v = loss.value().item();
        v
    };
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let auto: Vec<_> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let numeric = finite_difference(&params, eval, 1e-5);
    max_relative_error(&auto, &numeric, 1e-6)
}

fn weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Contracts an arbitrary-shaped output against fixed random weights so every
/// output entry gets a distinct upstream gradient.
fn contract<'t>(tape: &'t Tape<f64>, v: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let n = v.value().len();
    let w = tape.leaf(Tensor::new(&v.shape(), weights(n, seed))?);
    Ok(v.mul(w)?.sum())
}

#[test]
fn linear_map_gradient_is_input_broadcast() {
    let tape = Tape::new();
    let w = tape.leaf(Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.0, 0.0, 3.0]]).unwrap());
    let x = tape.leaf(Tensor::from_rows(&[vec![2.0], vec![-3.0], vec![5.0]]).unwrap());
    let loss = w.matmul(x).unwrap().sum();
    let g = tape.backward(loss).unwrap().wrt(w);
    assert_eq!(g.data(), &[2.0, -3.0, 5.0, 2.0, -3.0, 5.0]);
}

#[test]
fn inactive_relu_has_zero_gradient() {
    let tape = Tape::new();
    let v = tape.leaf(Tensor::new(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
    let loss = v.abs().neg().relu().sum();
    let g = tape.backward(loss).unwrap().wrt(v);
    assert!(g.data().iter().all(|&x| x == 0.0));
}

#[test]
fn backward_on_leaf_is_rejected() {
    let tape = Tape::new();
    let v = tape.leaf(Tensor::scalar(1.0f64));
    assert!(tape.backward(v).is_err());
}

#[test]
fn fan_out_gradients_sum() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0f64));
    let y = x.add(x).unwrap().add(x.mul(x).unwrap()).unwrap().sum();
    let g = tape.backward(y).unwrap().wrt(x);
    assert_eq!(g.item(), 2.0 + 6.0);
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let params = vec![
        random(&[6, 5], &mut rng),
        random(&[5, 4], &mut rng),
        random(&[4], &mut rng),
        random(&[4, 3], &mut rng),
        random(&[3], &mut rng),
    ];
    let err = check(params, |_, v| {
        let h = v[0].matmul(v[1])?.add_bias(v[2])?.relu();
        let out = h.matmul(v[3])?.add_bias(v[4])?;
        out.cross_entropy(vec![0, 2, 1, 1], vec![0, 1, 3, 5])
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn batched_matmul_gradient() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let params = vec![random(&[3, 4, 2], &mut rng), random(&[3, 2, 1], &mut rng)];
    let err = check(params, |t, v| contract(t, v[0].batched_matmul(v[1])?, 1));
    assert!(err < 1e-3, "{err}");
}

#[test]
fn softmax_gradient_with_mask_and_temperature() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
    let params = vec![random(&[3, 4], &mut rng).map(|x| 3.0 * x)];
    let mask = vec![
        true, true, false, true, true, false, true, true, true, true, true, true,
    ];
    let err = check(params, move |t, v| {
        contract(t, v[0].masked_softmax(mask.clone(), 0.7, 8.0)?, 2)
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn softmax_gradient_vanishes_outside_clip() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&[vec![20.0, 0.0, -1.0]]).unwrap());
    let y = x.masked_softmax(vec![true; 3], 1.0, 8.0).unwrap();
    let loss = contract(&tape, y, 3).unwrap();
    let g = tape.backward(loss).unwrap().wrt(x);
    assert_eq!(g.data()[0], 0.0);
    assert!(g.data()[1] != 0.0);
}

#[test]
fn gather_gradient_scatters() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
    let params = vec![random(&[4, 3], &mut rng)];
    let err = check(params, |t, v| {
        contract(t, v[0].gather(vec![0, 2, 2, 3, 0, 1], &[2, 3])?, 4)
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn normalization_gradients() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
    let params = vec![
        random(&[5, 4], &mut rng),
        random(&[4], &mut rng),
        random(&[4], &mut rng),
    ];
    let ln = check(params.clone(), |t, v| {
        contract(t, v[0].layer_norm(v[1], v[2], 1e-5)?, 5)
    });
    assert!(ln < 1e-3, "layer norm {ln}");
    let bn = check(params.clone(), |t, v| {
        let (y, _) = v[0].batch_norm(v[1], v[2], 1e-5, BatchStats::Batch)?;
        contract(t, y, 6)
    });
    assert!(bn < 1e-3, "batch norm {bn}");
    let bn_eval = check(params, |t, v| {
        let mean = [0.1, -0.2, 0.0, 0.3];
        let var = [1.0, 0.5, 2.0, 0.7];
        let (y, _) = v[0].batch_norm(
            v[1],
            v[2],
            1e-5,
            BatchStats::Fixed {
                mean: &mean,
                var: &var,
            },
        )?;
        contract(t, y, 7)
    });
    assert!(bn_eval < 1e-3, "batch norm eval {bn_eval}");
}

#[test]
fn row_normalize_and_scale_gradients() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(16);
    let params = vec![random(&[4, 3], &mut rng), Tensor::scalar(1.7)];
    let err = check(params, |t, v| {
        contract(t, v[0].row_normalize(1e-6)?.scale_by(v[1])?, 8)
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn column_slicing_and_concat_gradients() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let params = vec![random(&[3, 5], &mut rng), random(&[3, 2], &mut rng)];
    let err = check(params, |t, v| {
        let a = v[0].slice_cols(1, 3)?;
        let b = v[0].slice_cols(0, 2)?.scale(0.5);
        let c = Var::concat_cols(&[a, v[1], b])?;
        contract(t, c.reshape(&[3, 7])?, 9)
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn bce_gradient() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(18);
    let params = vec![random(&[5, 2], &mut rng).map(|x| 4.0 * x)];
    let err = check(params, |_, v| {
        v[0].bce_with_logits(vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0], vec![0, 2, 4])
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn mul_const_gradient() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
    let params = vec![random(&[2, 3], &mut rng)];
    let err = check(params, |t, v| {
        contract(t, v[0].mul_const(vec![0.0, 2.0, 2.0, 2.0, 0.0, 2.0])?, 10)
    });
    assert!(err < 1e-3, "{err}");
}
