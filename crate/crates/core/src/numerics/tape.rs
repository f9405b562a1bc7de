//! Reverse-mode automatic differentiation over a small op set.
//!
//! Values are computed eagerly as ops are recorded. `Tape::backward` walks
//! the recorded nodes in reverse and accumulates gradients, summing over
//! fan-out.

use std::cell::{Ref, RefCell};

use super::tensor::{matmul_nt_acc, matmul_tn_acc, Real, Tensor};
use crate::error::{Error, Result};

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    BatchedMatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Vec<T>),
    Scale(usize, T),
    ScaleBy(usize, usize),
    Relu(usize),
    Neg(usize),
    Abs(usize),
    Gather {
        src: usize,
        idx: Vec<usize>,
    },
    Softmax {
        x: usize,
        mask: Vec<bool>,
        tau: f64,
        clip: f64,
    },
    RowNormalize {
        x: usize,
        denom: Vec<T>,
        clamped: Vec<bool>,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Reshape(usize),
    SliceCols {
        a: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        rows: Vec<usize>,
        probs: Vec<T>,
    },
    Bce {
        logits: usize,
        targets: Vec<T>,
        rows: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Normalization statistics mode for [`Var::batch_norm`].
pub enum BatchStats<'a, T> {
    /// Use the statistics of the current rows.
    Batch,
    /// Use fixed per-column mean and variance.
    Fixed { mean: &'a [T], var: &'a [T] },
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of the loss w.r.t. `v`; zeros if `v` did not influence it.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        let shape = &self.shapes[v.id];
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf (parameter or constant input).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Grads<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Shape("backward requires a scalar loss".into()));
        }
        if matches!(nodes[loss.id].op, Op::Leaf) {
            return Err(Error::Contract("backward on an untracked value".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Grads {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn acc<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], id: usize, len: usize) -> &'a mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(grads: &mut [Option<Vec<T>>], id: usize, g: &[T]) {
    let dst = acc(grads, id, g.len());
    for (d, &v) in dst.iter_mut().zip(g) {
        *d += v;
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (p, q) = val(*a).dims2().unwrap();
            let r = val(*b).shape()[1];
            let da = acc(grads, *a, p * q);
            matmul_nt_acc(g, val(*b).data(), p, q, r, da);
            let db = acc(grads, *b, q * r);
            matmul_tn_acc(val(*a).data(), g, p, q, r, db);
        }
        Op::BatchedMatMul(a, b) => {
            let (bs, p, q) = val(*a).dims3().unwrap();
            let r = val(*b).shape()[2];
            {
                let da = acc(grads, *a, bs * p * q);
                for s in 0..bs {
                    matmul_nt_acc(
                        &g[s * p * r..(s + 1) * p * r],
                        &val(*b).data()[s * q * r..(s + 1) * q * r],
                        p,
                        q,
                        r,
                        &mut da[s * p * q..(s + 1) * p * q],
                    );
                }
            }
            let db = acc(grads, *b, bs * q * r);
            for s in 0..bs {
                matmul_tn_acc(
                    &val(*a).data()[s * p * q..(s + 1) * p * q],
                    &g[s * p * r..(s + 1) * p * r],
                    p,
                    q,
                    r,
                    &mut db[s * q * r..(s + 1) * q * r],
                );
            }
        }
        Op::Add(a, b) => {
            add_into(grads, *a, g);
            add_into(grads, *b, g);
        }
        Op::AddBias(a, b) => {
            add_into(grads, *a, g);
            let c = val(*b).len();
            let db = acc(grads, *b, c);
            for row in g.chunks(c) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        Op::Mul(a, b) => {
            let ga: Vec<T> = g.iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect();
            let gb: Vec<T> = g.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect();
            add_into(grads, *a, &ga);
            add_into(grads, *b, &gb);
        }
        Op::MulConst(a, c) => {
            let ga: Vec<T> = g.iter().zip(c).map(|(&x, &y)| x * y).collect();
            add_into(grads, *a, &ga);
        }
        Op::Scale(a, c) => {
            let ga: Vec<T> = g.iter().map(|&x| x * *c).collect();
            add_into(grads, *a, &ga);
        }
        Op::ScaleBy(a, s) => {
            let sv = val(*s).item();
            let ga: Vec<T> = g.iter().map(|&x| x * sv).collect();
            let gs: T = g.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).sum();
            add_into(grads, *a, &ga);
            add_into(grads, *s, &[gs]);
        }
        Op::Relu(a) => {
            let ga: Vec<T> = g
                .iter()
                .zip(val(*a).data())
                .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                .collect();
            add_into(grads, *a, &ga);
        }
        Op::Neg(a) => {
            let ga: Vec<T> = g.iter().map(|&x| -x).collect();
            add_into(grads, *a, &ga);
        }
        Op::Abs(a) => {
            let ga: Vec<T> = g
                .iter()
                .zip(val(*a).data())
                .map(|(&x, &y)| {
                    if y > T::zero() {
                        x
                    } else if y < T::zero() {
                        -x
                    } else {
                        T::zero()
                    }
                })
                .collect();
            add_into(grads, *a, &ga);
        }
        Op::Gather { src, idx } => {
            let w = val(*src).row_len();
            let ds = acc(grads, *src, val(*src).len());
            for (k, &i) in idx.iter().enumerate() {
                for (d, &v) in ds[i * w..(i + 1) * w]
                    .iter_mut()
                    .zip(&g[k * w..(k + 1) * w])
                {
                    *d += v;
                }
            }
        }
        Op::Softmax { x, mask, tau, clip } => {
            let (rows, k) = out.dims2().unwrap();
            let y = out.data();
            let xv = val(*x).data();
            let inv_tau = T::of_f64(1.0 / tau);
            let clip = T::of_f64(*clip);
            let dx = acc(grads, *x, rows * k);
            for r in 0..rows {
                let span = r * k..(r + 1) * k;
                let dot: T = g[span.clone()]
                    .iter()
                    .zip(&y[span.clone()])
                    .map(|(&a, &b)| a * b)
                    .sum();
                for j in span {
                    let inside = xv[j] > -clip && xv[j] < clip;
                    if mask[j] && inside {
                        dx[j] += y[j] * (g[j] - dot) * inv_tau;
                    }
                }
            }
        }
        Op::RowNormalize { x, denom, clamped } => {
            let d = out.row_len();
            let y = out.data();
            let dx = acc(grads, *x, y.len());
            for (r, (&den, &cl)) in denom.iter().zip(clamped).enumerate() {
                let span = r * d..(r + 1) * d;
                if cl {
                    for j in span {
                        dx[j] += g[j] / den;
                    }
                } else {
                    let dot: T = g[span.clone()]
                        .iter()
                        .zip(&y[span.clone()])
                        .map(|(&a, &b)| a * b)
                        .sum();
                    for j in span {
                        dx[j] += (g[j] - y[j] * dot) / den;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let d = out.row_len();
            let rows = out.rows();
            let gam = val(*gamma).data().to_vec();
            let mut dgam = vec![T::zero(); d];
            let mut dbet = vec![T::zero(); d];
            let dn = T::of_f64(d as f64);
            let dx = acc(grads, *x, rows * d);
            for r in 0..rows {
                let span = r * d..(r + 1) * d;
                let mut sum_dxh = T::zero();
                let mut sum_dxh_xh = T::zero();
                for (c, j) in span.clone().enumerate() {
                    dgam[c] += g[j] * xhat[j];
                    dbet[c] += g[j];
                    let dxh = g[j] * gam[c];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xhat[j];
                }
                for (c, j) in span.enumerate() {
                    let dxh = g[j] * gam[c];
                    dx[j] += inv_std[r] / dn * (dn * dxh - sum_dxh - xhat[j] * sum_dxh_xh);
                }
            }
            add_into(grads, *gamma, &dgam);
            add_into(grads, *beta, &dbet);
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let d = out.row_len();
            let rows = out.rows();
            let gam = val(*gamma).data().to_vec();
            let mut dgam = vec![T::zero(); d];
            let mut dbet = vec![T::zero(); d];
            let mut sum_dxh = vec![T::zero(); d];
            let mut sum_dxh_xh = vec![T::zero(); d];
            for r in 0..rows {
                for c in 0..d {
                    let j = r * d + c;
                    dgam[c] += g[j] * xhat[j];
                    dbet[c] += g[j];
                    let dxh = g[j] * gam[c];
                    sum_dxh[c] += dxh;
                    sum_dxh_xh[c] += dxh * xhat[j];
                }
            }
            let nn = T::of_f64(rows as f64);
            let dx = acc(grads, *x, rows * d);
            for r in 0..rows {
                for c in 0..d {
                    let j = r * d + c;
                    let dxh = g[j] * gam[c];
                    dx[j] += if *train {
                        inv_std[c] / nn * (nn * dxh - sum_dxh[c] - xhat[j] * sum_dxh_xh[c])
                    } else {
                        dxh * inv_std[c]
                    };
                }
            }
            add_into(grads, *gamma, &dgam);
            add_into(grads, *beta, &dbet);
        }
        Op::Reshape(a) => add_into(grads, *a, g),
        Op::SliceCols { a, start } => {
            let (rows, cols) = val(*a).dims2().unwrap();
            let len = out.shape()[1];
            let da = acc(grads, *a, rows * cols);
            for r in 0..rows {
                for c in 0..len {
                    da[r * cols + start + c] += g[r * len + c];
                }
            }
        }
        Op::ConcatCols(parts) => {
            let (rows, total) = out.dims2().unwrap();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).shape()[1];
                let dp = acc(grads, p, rows * w);
                for r in 0..rows {
                    for c in 0..w {
                        dp[r * w + c] += g[r * total + offset + c];
                    }
                }
                offset += w;
            }
        }
        Op::Sum(a) => {
            let n = val(*a).len();
            let da = acc(grads, *a, n);
            for d in da.iter_mut() {
                *d += g[0];
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            rows,
            probs,
        } => {
            let c = val(*logits).row_len();
            let scale = g[0] / T::of_f64(rows.len() as f64);
            let dl = acc(grads, *logits, val(*logits).len());
            for (k, (&r, &t)) in rows.iter().zip(targets).enumerate() {
                for j in 0..c {
                    let onehot = if j == t { T::one() } else { T::zero() };
                    dl[r * c + j] += scale * (probs[k * c + j] - onehot);
                }
            }
        }
        Op::Bce {
            logits,
            targets,
            rows,
        } => {
            let lv = val(*logits);
            let c = lv.row_len();
            let scale = g[0] / T::of_f64((rows.len() * c) as f64);
            let z = lv.data().to_vec();
            let dl = acc(grads, *logits, z.len());
            for (k, &r) in rows.iter().enumerate() {
                for j in 0..c {
                    let zz = z[r * c + j];
                    let sig = T::one() / (T::one() + (-zz).exp());
                    dl[r * c + j] += scale * (sig - targets[k * c + j]);
                }
            }
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract(
                "variables recorded on different tapes".into(),
            ))
        }
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id)))
    }

    pub fn batched_matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let v = self.value().batched_matmul(&other.value())?;
        Ok(self.tape.push(v, Op::BatchedMatMul(self.id, other.id)))
    }

    fn zip_with(&self, other: &Var<'t, T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape(), data)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_with(&other, |a, b| a + b)?;
        Ok(self.tape.push(v, Op::Add(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_with(&other, |a, b| a * b)?;
        Ok(self.tape.push(v, Op::Mul(self.id, other.id)))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias)?;
        let v = {
            let a = self.value();
            let b = bias.value();
            let c = b.len();
            if a.row_len() != c || a.shape().len() != 2 {
                return Err(Error::Shape(format!(
                    "bias {:?} for {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(c) {
                for (x, &bv) in row.iter_mut().zip(b.data()) {
                    *x += bv;
                }
            }
            Tensor::new(a.shape(), data)?
        };
        Ok(self.tape.push(v, Op::AddBias(self.id, bias.id)))
    }

    /// Elementwise product with a constant (non-tracked) tensor of equal size.
    pub fn mul_const(self, c: Vec<T>) -> Result<Var<'t, T>> {
        let v = {
            let a = self.value();
            if a.len() != c.len() {
                return Err(Error::Shape(format!(
                    "const of {} for {:?}",
                    c.len(),
                    a.shape()
                )));
            }
            let data = a.data().iter().zip(&c).map(|(&x, &y)| x * y).collect();
            Tensor::new(a.shape(), data)?
        };
        Ok(self.tape.push(v, Op::MulConst(self.id, c)))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let v = self.value().map(|x| x * c);
        self.tape.push(v, Op::Scale(self.id, c))
    }

    /// Multiplies by a tracked scalar.
    pub fn scale_by(self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&s)?;
        if s.value().len() != 1 {
            return Err(Error::Shape("scale_by expects a scalar".into()));
        }
        let sv = s.value().item();
        let v = self.value().map(|x| x * sv);
        Ok(self.tape.push(v, Op::ScaleBy(self.id, s.id)))
    }

    pub fn relu(self) -> Var<'t, T> {
        let v = self.value().map(|x| x.max(T::zero()));
        self.tape.push(v, Op::Relu(self.id))
    }

    pub fn neg(self) -> Var<'t, T> {
        let v = self.value().map(|x| -x);
        self.tape.push(v, Op::Neg(self.id))
    }

    pub fn abs(self) -> Var<'t, T> {
        let v = self.value().map(|x| x.abs());
        self.tape.push(v, Op::Abs(self.id))
    }

    /// Gathers leading-dimension slices of `self` by index. The result has
    /// shape `lead ++ self.shape[1..]`.
    pub fn gather(self, idx: Vec<usize>, lead: &[usize]) -> Result<Var<'t, T>> {
        let v = {
            let src = self.value();
            let n = src.rows();
            let w = src.row_len();
            if lead.iter().product::<usize>() != idx.len() {
                return Err(Error::Shape(format!(
                    "{} indices for lead shape {:?}",
                    idx.len(),
                    lead
                )));
            }
            let mut data = Vec::with_capacity(idx.len() * w);
            for &i in &idx {
                if i >= n {
                    return Err(Error::Shape(format!("gather index {i} out of {n} rows")));
                }
                data.extend_from_slice(src.row(i));
            }
            let mut shape = lead.to_vec();
            shape.extend_from_slice(&src.shape()[1..]);
            Tensor::new(&shape, data)?
        };
        Ok(self.tape.push(v, Op::Gather { src: self.id, idx }))
    }

    pub fn masked_softmax(self, mask: Vec<bool>, tau: f64, clip: f64) -> Result<Var<'t, T>> {
        let v = super::tensor::masked_softmax(&self.value(), &mask, tau, clip)?;
        Ok(self.tape.push(
            v,
            Op::Softmax {
                x: self.id,
                mask,
                tau,
                clip,
            },
        ))
    }

    /// Each row `r` becomes `r / max(‖r‖₂, eps)`.
    pub fn row_normalize(self, eps: f64) -> Result<Var<'t, T>> {
        let eps = T::of_f64(eps);
        let (v, denom, clamped) = {
            let a = self.value();
            let d = a.row_len();
            let mut data = a.data().to_vec();
            let mut denom = Vec::with_capacity(a.rows());
            let mut clamped = Vec::with_capacity(a.rows());
            for row in data.chunks_mut(d) {
                let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
                let den = if norm > eps { norm } else { eps };
                clamped.push(norm <= eps);
                denom.push(den);
                for x in row.iter_mut() {
                    *x = *x / den;
                }
            }
            (Tensor::new(a.shape(), data)?, denom, clamped)
        };
        Ok(self.tape.push(
            v,
            Op::RowNormalize {
                x: self.id,
                denom,
                clamped,
            },
        ))
    }

    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        self.same_tape(&gamma)?;
        self.same_tape(&beta)?;
        let (v, xhat, inv_std) = {
            let a = self.value();
            let (rows, d) = a.dims2()?;
            let gam = gamma.value();
            let bet = beta.value();
            if gam.len() != d || bet.len() != d {
                return Err(Error::Shape("layer norm affine width".into()));
            }
            let dn = T::of_f64(d as f64);
            let mut xhat = vec![T::zero(); rows * d];
            let mut out = vec![T::zero(); rows * d];
            let mut inv_std = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = a.row(r);
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / dn;
                let inv = T::one() / (var + T::of_f64(eps)).sqrt();
                inv_std.push(inv);
                for c in 0..d {
                    let xh = (row[c] - mean) * inv;
                    xhat[r * d + c] = xh;
                    out[r * d + c] = xh * gam.data()[c] + bet.data()[c];
                }
            }
            (Tensor::new(&[rows, d], out)?, xhat, inv_std)
        };
        Ok(self.tape.push(
            v,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
        ))
    }

    /// Per-column normalization. In [`BatchStats::Batch`] mode returns the
    /// biased batch mean and variance alongside the output.
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: f64,
        stats: BatchStats<'_, T>,
    ) -> Result<(Var<'t, T>, Option<(Vec<T>, Vec<T>)>)> {
        self.same_tape(&gamma)?;
        self.same_tape(&beta)?;
        let train = matches!(stats, BatchStats::Batch);
        let (v, xhat, inv_std, batch) = {
            let a = self.value();
            let (rows, d) = a.dims2()?;
            let gam = gamma.value();
            let bet = beta.value();
            if gam.len() != d || bet.len() != d {
                return Err(Error::Shape("batch norm affine width".into()));
            }
            let (mean, var) = match stats {
                BatchStats::Batch => {
                    if rows == 0 {
                        return Err(Error::Contract("batch norm over zero rows".into()));
                    }
                    let nn = T::of_f64(rows as f64);
                    let mut mean = vec![T::zero(); d];
                    for r in 0..rows {
                        for (m, &x) in mean.iter_mut().zip(a.row(r)) {
                            *m += x;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m = *m / nn);
                    let mut var = vec![T::zero(); d];
                    for r in 0..rows {
                        for ((s, &x), &m) in var.iter_mut().zip(a.row(r)).zip(&mean) {
                            *s += (x - m) * (x - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s = *s / nn);
                    (mean, var)
                }
                BatchStats::Fixed { mean, var } => {
                    if mean.len() != d || var.len() != d {
                        return Err(Error::Shape("batch norm running stats width".into()));
                    }
                    (mean.to_vec(), var.to_vec())
                }
            };
            let inv_std: Vec<T> = var
                .iter()
                .map(|&s| T::one() / (s + T::of_f64(eps)).sqrt())
                .collect();
            let mut xhat = vec![T::zero(); rows * d];
            let mut out = vec![T::zero(); rows * d];
            for r in 0..rows {
                for c in 0..d {
                    let xh = (a.data()[r * d + c] - mean[c]) * inv_std[c];
                    xhat[r * d + c] = xh;
                    out[r * d + c] = xh * gam.data()[c] + bet.data()[c];
                }
            }
            (
                Tensor::new(&[rows, d], out)?,
                xhat,
                inv_std,
                train.then_some((mean, var)),
            )
        };
        let var = self.tape.push(
            v,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                train,
            },
        );
        Ok((var, batch))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().clone().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape(self.id)))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = {
            let a = self.value();
            let (rows, cols) = a.dims2()?;
            if start + len > cols {
                return Err(Error::Shape(format!(
                    "columns {start}..{} of {cols}",
                    start + len
                )));
            }
            let mut data = Vec::with_capacity(rows * len);
            for r in 0..rows {
                data.extend_from_slice(&a.row(r)[start..start + len]);
            }
            Tensor::new(&[rows, len], data)?
        };
        Ok(self.tape.push(v, Op::SliceCols { a: self.id, start }))
    }

    pub fn concat_cols(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero parts".into()))?;
        let v = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let rows = vals[0].dims2()?.0;
            let mut total = 0;
            for v in &vals {
                let (r, c) = v.dims2()?;
                if r != rows {
                    return Err(Error::Shape("concat row mismatch".into()));
                }
                total += c;
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::new(&[rows, total], data)?
        };
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.push(v, Op::ConcatCols(ids)))
    }

    pub fn sum(self) -> Var<'t, T> {
        let s: T = self.value().data().iter().copied().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Mean softmax cross-entropy over the selected rows.
    pub fn cross_entropy(self, targets: Vec<usize>, rows: Vec<usize>) -> Result<Var<'t, T>> {
        if targets.len() != rows.len() || rows.is_empty() {
            return Err(Error::Shape(
                "cross entropy needs one target per selected row".into(),
            ));
        }
        let (loss, probs) = {
            let l = self.value();
            let (n, c) = l.dims2()?;
            let mut probs = Vec::with_capacity(rows.len() * c);
            let mut total = T::zero();
            for (&r, &t) in rows.iter().zip(&targets) {
                if r >= n || t >= c {
                    return Err(Error::Shape(format!("row {r} / class {t} out of range")));
                }
                let row = l.row(r);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let z: T = row.iter().map(|&x| (x - max).exp()).sum();
                let lz = z.ln() + max;
                total += lz - row[t];
                probs.extend(row.iter().map(|&x| (x - lz).exp()));
            }
            (total / T::of_f64(rows.len() as f64), probs)
        };
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets,
                rows,
                probs,
            },
        ))
    }

    /// Mean binary cross-entropy with logits over the selected rows; `targets`
    /// holds `rows.len() × width` values in {0, 1}.
    pub fn bce_with_logits(self, targets: Vec<T>, rows: Vec<usize>) -> Result<Var<'t, T>> {
        let loss = {
            let l = self.value();
            let (n, c) = l.dims2()?;
            if targets.len() != rows.len() * c || rows.is_empty() {
                return Err(Error::Shape("bce target count".into()));
            }
            let mut total = T::zero();
            for (k, &r) in rows.iter().enumerate() {
                if r >= n {
                    return Err(Error::Shape(format!("row {r} out of range")));
                }
                for j in 0..c {
                    let z = l.row(r)[j];
                    let y = targets[k * c + j];
                    total += z.max(T::zero()) - y * z + (T::one() + (-z.abs()).exp()).ln();
                }
            }
            total / T::of_f64((rows.len() * c) as f64)
        };
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits: self.id,
                targets,
                rows,
            },
        ))
    }
}
