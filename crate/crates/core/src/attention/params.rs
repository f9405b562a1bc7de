use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{checkpoint, Real, Tensor};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Layer,
    Batch,
}

/// Shape and behaviour of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub out_dim: usize,
    pub ffn_dim: usize,
    pub norm: NormKind,
    pub vnorm: bool,
    pub dropout: f64,
    pub clip: f64,
    pub norm_eps: f64,
    pub vnorm_eps: f64,
}

impl ModelConfig {
    /// Narrow single-head network with layer norm and V-normalization.
    pub fn estimator(in_dim: usize, width: usize, layers: usize, out_dim: usize) -> Self {
        ModelConfig {
            in_dim,
            width,
            heads: 1,
            layers,
            out_dim,
            ffn_dim: 2 * width,
            norm: NormKind::Layer,
            vnorm: true,
            dropout: 0.0,
            clip: 8.0,
            norm_eps: 1e-5,
            vnorm_eps: 1e-6,
        }
    }

    /// Wide network with batch norm and raw V.
    pub fn final_net(
        in_dim: usize,
        width: usize,
        heads: usize,
        layers: usize,
        out_dim: usize,
        dropout: f64,
    ) -> Self {
        ModelConfig {
            heads,
            norm: NormKind::Batch,
            vnorm: false,
            dropout,
            ..Self::estimator(in_dim, width, layers, out_dim)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible into {} heads",
                self.width, self.heads
            )));
        }
        if self.layers == 0 || self.in_dim == 0 || self.out_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.clip <= 0.0 {
            return Err(Error::Config("clip must be positive".into()));
        }
        Ok(())
    }
}

/// Per-layer tensor slots, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Emb,
    Wq,
    Wk,
    Wv,
    We,
    Wb,
    VScale,
    Norm1G,
    Norm1B,
    W1,
    B1,
    W2,
    B2,
    Norm2G,
    Norm2B,
}

pub(crate) const SLOTS: [Slot; 15] = [
    Slot::Emb,
    Slot::Wq,
    Slot::Wk,
    Slot::Wv,
    Slot::We,
    Slot::Wb,
    Slot::VScale,
    Slot::Norm1G,
    Slot::Norm1B,
    Slot::W1,
    Slot::B1,
    Slot::W2,
    Slot::B2,
    Slot::Norm2G,
    Slot::Norm2B,
];

const SLOT_NAMES: [&str; 15] = [
    "emb", "wq", "wk", "wv", "we", "wb", "vscale", "norm1.g", "norm1.b", "w1", "b1", "w2", "b2",
    "norm2.g", "norm2.b",
];

/// Index of the input embedding weight; `+1` is its bias.
pub const INPUT: usize = 0;

pub fn layer_slot(layer: usize, slot: Slot) -> usize {
    2 + layer * SLOTS.len() + slot as usize
}

/// Trainable tensors plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor<T>>,
    /// Running `(mean, var)` per norm site (two per layer); used by batch norm at eval.
    pub running: Vec<(Vec<T>, Vec<T>)>,
}

fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], a: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of_f64(rng.random_range(-a..=a)))
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn glorot<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<T> {
    uniform(rng, &[rows, cols], (6.0 / (rows + cols) as f64).sqrt())
}

impl<T: Real> ModelParams<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let mut r = rng::stream(seed, &[0x1417]);
        let mut tensors = vec![glorot(&mut r, config.in_dim, d), Tensor::zeros(&[d])];
        for _ in 0..config.layers {
            for slot in SLOTS {
                tensors.push(match slot {
                    Slot::Emb => uniform(&mut r, &[3, d], 1.0),
                    Slot::Wq | Slot::Wk | Slot::Wv | Slot::We => glorot(&mut r, d, d),
                    Slot::Wb => glorot(&mut r, d, config.heads),
                    Slot::VScale => Tensor::scalar(T::one()),
                    Slot::Norm1G | Slot::Norm2G => Tensor::filled(&[d], T::one()),
                    Slot::Norm1B | Slot::Norm2B | Slot::B2 => Tensor::zeros(&[d]),
                    Slot::W1 => glorot(&mut r, d, config.ffn_dim),
                    Slot::B1 => Tensor::zeros(&[config.ffn_dim]),
                    Slot::W2 => glorot(&mut r, config.ffn_dim, d),
                });
            }
        }
        tensors.push(glorot(&mut r, d, config.out_dim));
        tensors.push(Tensor::zeros(&[config.out_dim]));
        let running = vec![(vec![T::zero(); d], vec![T::one(); d]); 2 * config.layers];
        Ok(ModelParams {
            config,
            tensors,
            running,
        })
    }

    pub fn output_index(&self) -> usize {
        self.tensors.len() - 2
    }

    pub fn layer(&self, layer: usize, slot: Slot) -> &Tensor<T> {
        &self.tensors[layer_slot(layer, slot)]
    }

    pub fn layer_mut(&mut self, layer: usize, slot: Slot) -> &mut Tensor<T> {
        &mut self.tensors[layer_slot(layer, slot)]
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["input.w".to_string(), "input.b".to_string()];
        for l in 0..self.config.layers {
            names.extend(SLOT_NAMES.iter().map(|s| format!("layer{l}.{s}")));
        }
        names.push("output.w".into());
        names.push("output.b".into());
        names
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of_f64(x.as_f64())).collect::<Vec<U>>();
        ModelParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            running: self
                .running
                .iter()
                .map(|(m, v)| (conv(m), conv(v)))
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Blends batch statistics into the running statistics.
    pub fn update_running(&mut self, batch: &[Option<(Vec<T>, Vec<T>)>], momentum: f64) {
        let m = T::of_f64(momentum);
        for (run, b) in self.running.iter_mut().zip(batch) {
            if let Some((bm, bv)) = b {
                for (r, &x) in run.0.iter_mut().zip(bm) {
                    *r = (T::one() - m) * *r + m * x;
                }
                for (r, &x) in run.1.iter_mut().zip(bv) {
                    *r = (T::one() - m) * *r + m * x;
                }
            }
        }
    }

    /// Writes parameters and running statistics as a tensor checkpoint.
    pub fn write_checkpoint(&self, w: impl Write) -> std::io::Result<()> {
        let mut named: Vec<(String, Tensor<T>)> = self
            .names()
            .into_iter()
            .zip(self.tensors.iter().cloned())
            .collect();
        for (k, (m, v)) in self.running.iter().enumerate() {
            let d = m.len();
            named.push((
                format!("running{k}.mean"),
                Tensor::new(&[d], m.clone()).expect("shape"),
            ));
            named.push((
                format!("running{k}.var"),
                Tensor::new(&[d], v.clone()).expect("shape"),
            ));
        }
        checkpoint::write_tensors(w, &named)
    }

    /// Reads a checkpoint written for the same configuration.
    pub fn read_checkpoint(config: ModelConfig, r: impl Read) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        let named = checkpoint::read_tensors::<T, _>(r)?;
        let names = p.names();
        if named.len() != names.len() + 2 * p.running.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors",
                named.len()
            )));
        }
        for (k, (name, t)) in named.iter().enumerate().take(names.len()) {
            if *name != names[k] || t.shape() != p.tensors[k].shape() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor `{name}` does not fit `{}`",
                    names[k]
                )));
            }
            p.tensors[k] = t.clone();
        }
        for (k, run) in p.running.iter_mut().enumerate() {
            let m = &named[names.len() + 2 * k].1;
            let v = &named[names.len() + 2 * k + 1].1;
            if m.len() != run.0.len() || v.len() != run.1.len() {
                return Err(Error::Shape("running statistics width".into()));
            }
            run.0 = m.data().to_vec();
            run.1 = v.data().to_vec();
        }
        Ok(p)
    }
}
