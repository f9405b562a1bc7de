use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element type. Training runs in `f32`; gradient checking in `f64`.
pub trait Real:
    Float + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Display + Send + Sync + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor with up to three dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape(format!("rank {} not in 1..=3", shape.len())));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(x: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions after the first.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.row_len() + j]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of_f64(x.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(&[c, r], out)
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [b, r, c] => Ok((*b, *r, *c)),
            s => Err(Error::Shape(format!(
                "expected a rank-3 tensor, got shape {s:?}"
            ))),
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (p, q) = self.dims2()?;
        let (q2, r) = other.dims2()?;
        if q != q2 {
            return Err(Error::Shape(format!(
                "matmul inner dims {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); p * r];
        matmul_acc(&self.data, &other.data, p, q, r, &mut out);
        Self::new(&[p, r], out)
    }

    pub fn batched_matmul(&self, other: &Self) -> Result<Self> {
        let (b, p, q) = self.dims3()?;
        let (b2, q2, r) = other.dims3()?;
        if b != b2 || q != q2 {
            return Err(Error::Shape(format!(
                "batched matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); b * p * r];
        for s in 0..b {
            matmul_acc(
                &self.data[s * p * q..(s + 1) * p * q],
                &other.data[s * q * r..(s + 1) * q * r],
                p,
                q,
                r,
                &mut out[s * p * r..(s + 1) * p * r],
            );
        }
        Self::new(&[b, p, r], out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `out += a[p×q] · b[q×r]`, accumulating each output element in index order.
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], p: usize, q: usize, r: usize, out: &mut [T]) {
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == T::zero() {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[q×r] += a[p×q]ᵀ · g[p×r]`.
pub(crate) fn matmul_tn_acc<T: Real>(
    a: &[T],
    g: &[T],
    p: usize,
    q: usize,
    r: usize,
    out: &mut [T],
) {
    for i in 0..p {
        let grow = &g[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == T::zero() {
                continue;
            }
            let orow = &mut out[k * r..(k + 1) * r];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
}

/// `out[p×q] += g[p×r] · b[q×r]ᵀ`.
pub(crate) fn matmul_nt_acc<T: Real>(
    g: &[T],
    b: &[T],
    p: usize,
    q: usize,
    r: usize,
    out: &mut [T],
) {
    for i in 0..p {
        let grow = &g[i * r..(i + 1) * r];
        for k in 0..q {
            let brow = &b[k * r..(k + 1) * r];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * q + k] += acc;
        }
    }
}

/// Row-wise softmax over unmasked entries after clamping logits to
/// `[-clip, clip]` and dividing by `temperature`. Masked entries are 0.
pub fn masked_softmax<T: Real>(
    logits: &Tensor<T>,
    mask: &[bool],
    temperature: f64,
    clip: f64,
) -> Result<Tensor<T>> {
    let (rows, k) = logits.dims2()?;
    if mask.len() != rows * k {
        return Err(Error::Shape(format!(
            "mask has {} entries for {}x{} logits",
            mask.len(),
            rows,
            k
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    let mut out = vec![T::zero(); rows * k];
    softmax_rows(logits.data(), mask, rows, k, temperature, clip, &mut out)?;
    Tensor::new(&[rows, k], out)
}

pub(crate) fn softmax_rows<T: Real>(
    x: &[T],
    mask: &[bool],
    rows: usize,
    k: usize,
    temperature: f64,
    clip: f64,
    out: &mut [T],
) -> Result<()> {
    let clip_t = T::of_f64(clip);
    let inv_tau = T::of_f64(1.0 / temperature);
    for r in 0..rows {
        let xs = &x[r * k..(r + 1) * k];
        let ms = &mask[r * k..(r + 1) * k];
        let os = &mut out[r * k..(r + 1) * k];
        let mut max = T::neg_infinity();
        for (&v, &m) in xs.iter().zip(ms) {
            if m {
                let z = v.max(-clip_t).min(clip_t) * inv_tau;
                os_max(&mut max, z);
            }
        }
        if max == T::neg_infinity() {
            return Err(Error::Contract(format!("softmax row {r} is fully masked")));
        }
        let mut total = T::zero();
        for ((o, &v), &m) in os.iter_mut().zip(xs).zip(ms) {
            *o = if m {
                let e = (v.max(-clip_t).min(clip_t) * inv_tau - max).exp();
                total += e;
                e
            } else {
                T::zero()
            };
        }
        for o in os.iter_mut() {
            *o = *o / total;
        }
    }
    Ok(())
}

fn os_max<T: Real>(max: &mut T, z: T) {
    if z > *max {
        *max = z;
    }
}
