use super::params::{layer_slot, ModelParams, NormKind, Slot, INPUT};
use super::plan::{check_plan, FixedLayer};
use crate::error::{Error, Result};
use crate::numerics::{BatchStats, Real, Tape, Tensor, Var};
use crate::rng;

/// Per-call forward settings.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub tau: f64,
    /// Training mode: dropout active and batch norm uses batch statistics.
    pub train: bool,
    /// Keys the dropout masks; masks depend on this and the global node id only.
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn eval(tau: f64) -> Self {
        ForwardOptions {
            tau,
            train: false,
            dropout_seed: 0,
        }
    }
}

pub struct ForwardOutput<'t, T: Real> {
    /// One row per query of the last layer.
    pub logits: Var<'t, T>,
    /// Head-averaged scores per layer, `num_queries × deg`; masked slots are 0.
    pub scores: Vec<Tensor<f64>>,
    /// Batch statistics per norm site when training with batch norm.
    pub batch_stats: Vec<Option<(Vec<T>, Vec<T>)>>,
}

/// Records every parameter tensor on the tape.
pub fn bind<'t, T: Real>(tape: &'t Tape<T>, params: &ModelParams<T>) -> Vec<Var<'t, T>> {
    params
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect()
}

fn dropout<'t, T: Real>(
    x: Var<'t, T>,
    p: f64,
    opts: &ForwardOptions,
    site: u64,
    nodes: &[usize],
) -> Result<Var<'t, T>> {
    if !opts.train || p == 0.0 {
        return Ok(x);
    }
    let cols = x.shape()[1];
    let keep = T::of_f64(1.0 / (1.0 - p));
    let mask = nodes
        .iter()
        .flat_map(|&g| {
            (0..cols).map(move |c| {
                if rng::hash_unit(opts.dropout_seed, &[site, g as u64, c as u64]) < p {
                    T::zero()
                } else {
                    keep
                }
            })
        })
        .collect();
    x.mul_const(mask)
}

/// Attention sublayer without the residual: `concat_heads(Σ_u a_iu V_u)` for
/// every query, together with head-averaged scores.
///
/// `h` holds one row per entry of `layer.nodes`.
pub fn attention_block<'t, T: Real>(
    h: Var<'t, T>,
    layer: &FixedLayer,
    vars: &[Var<'t, T>],
    l: usize,
    cfg: &super::ModelConfig,
    tau: f64,
    normalize: bool,
) -> Result<(Var<'t, T>, Tensor<f64>)> {
    layer.check()?;
    let p = |s: Slot| vars[layer_slot(l, s)];
    let (rows, d) = {
        let v = h.value();
        v.dims2()?
    };
    if rows != layer.nodes.len() || d != cfg.width {
        return Err(Error::Shape(format!(
            "layer input {rows}×{d}, expected {}×{}",
            layer.nodes.len(),
            cfg.width
        )));
    }
    let (q, deg, dh) = (layer.num_queries, layer.deg, cfg.head_dim());
    let xq = h.gather((0..q).collect(), &[q])?;
    let qa = xq.matmul(p(Slot::Wq))?;
    let ka = h.matmul(p(Slot::Wk))?;
    let mut va = h.matmul(p(Slot::Wv))?;
    if normalize {
        va = va.row_normalize(cfg.vnorm_eps)?.scale_by(p(Slot::VScale))?;
    }
    let e_tab = p(Slot::Emb).matmul(p(Slot::We))?;
    let b_tab = p(Slot::Emb).matmul(p(Slot::Wb))?;
    let type_idx: Vec<usize> = layer.types.iter().map(|t| t.index()).collect();
    let inv_sqrt = T::of_f64(1.0 / (dh as f64).sqrt());

    let mut heads = Vec::with_capacity(cfg.heads);
    let mut avg = vec![0.0; q * deg];
    for j in 0..cfg.heads {
        let qj = qa.slice_cols(j * dh, dh)?.reshape(&[q, dh, 1])?;
        let kj = ka
            .slice_cols(j * dh, dh)?
            .gather(layer.keys.clone(), &[q, deg])?;
        let ej = e_tab
            .slice_cols(j * dh, dh)?
            .gather(type_idx.clone(), &[q, deg])?;
        let bj = b_tab
            .slice_cols(j, 1)?
            .gather(type_idx.clone(), &[q, deg])?
            .reshape(&[q, deg])?;
        let logits = kj
            .mul(ej)?
            .batched_matmul(qj)?
            .reshape(&[q, deg])?
            .scale(inv_sqrt)
            .add(bj)?;
        let a = logits.masked_softmax(layer.mask.clone(), tau, cfg.clip)?;
        for (s, &x) in avg.iter_mut().zip(a.value().data()) {
            *s += x.as_f64() / cfg.heads as f64;
        }
        let vj = va
            .slice_cols(j * dh, dh)?
            .gather(layer.keys.clone(), &[q, deg])?;
        heads.push(
            a.reshape(&[q, 1, deg])?
                .batched_matmul(vj)?
                .reshape(&[q, dh])?,
        );
    }
    let attn = if heads.len() == 1 {
        heads[0]
    } else {
        Var::concat_cols(&heads)?
    };
    Ok((attn, Tensor::new(&[q, deg], avg)?))
}

/// Attention sublayer with the residual: `x_i + concat_heads(Σ_u a_iu V_u)`.
pub fn attention_layer_forward<'t, T: Real>(
    h: Var<'t, T>,
    layer: &FixedLayer,
    vars: &[Var<'t, T>],
    l: usize,
    cfg: &super::ModelConfig,
    tau: f64,
    normalize: bool,
) -> Result<(Var<'t, T>, Tensor<f64>)> {
    let (attn, scores) = attention_block(h, layer, vars, l, cfg, tau, normalize)?;
    let q = layer.num_queries;
    Ok((h.gather((0..q).collect(), &[q])?.add(attn)?, scores))
}

fn norm<'t, T: Real>(
    x: Var<'t, T>,
    g: Var<'t, T>,
    b: Var<'t, T>,
    params: &ModelParams<T>,
    site: usize,
    train: bool,
) -> Result<(Var<'t, T>, Option<(Vec<T>, Vec<T>)>)> {
    let eps = params.config.norm_eps;
    match params.config.norm {
        NormKind::Layer => Ok((x.layer_norm(g, b, eps)?, None)),
        NormKind::Batch if train => x.batch_norm(g, b, eps, BatchStats::Batch),
        NormKind::Batch => {
            let (m, v) = &params.running[site];
            x.batch_norm(g, b, eps, BatchStats::Fixed { mean: m, var: v })
        }
    }
}

/// Runs the whole network over a plan. `features` holds all graph nodes;
/// rows of the first layer's node set are gathered from it.
pub fn network_forward<'t, T: Real>(
    tape: &'t Tape<T>,
    params: &ModelParams<T>,
    vars: &[Var<'t, T>],
    features: &Tensor<T>,
    plan: &[FixedLayer],
    opts: &ForwardOptions,
) -> Result<ForwardOutput<'t, T>> {
    let cfg = &params.config;
    check_plan(plan)?;
    if plan.len() != cfg.layers {
        return Err(Error::Shape(format!(
            "plan has {} layers, network has {}",
            plan.len(),
            cfg.layers
        )));
    }
    if features.dims2()?.1 != cfg.in_dim {
        return Err(Error::Shape(
            "feature width does not match network input".into(),
        ));
    }
    let n = features.rows();
    if let Some(&bad) = plan[0].nodes.iter().find(|&&v| v >= n) {
        return Err(Error::Contract(format!("unknown node id {bad}")));
    }
    let x = tape
        .leaf(features.clone())
        .gather(plan[0].nodes.clone(), &[plan[0].nodes.len()])?;
    let mut h = x.matmul(vars[INPUT])?.add_bias(vars[INPUT + 1])?;
    let mut scores = Vec::with_capacity(plan.len());
    let mut batch_stats = Vec::with_capacity(2 * plan.len());
    for (l, layer) in plan.iter().enumerate() {
        let p = |s: Slot| vars[layer_slot(l, s)];
        let site = 4 * l as u64;
        let (attn, sc) = attention_block(h, layer, vars, l, cfg, opts.tau, cfg.vnorm)?;
        scores.push(sc);
        let queries = layer.queries();
        let attn = dropout(attn, cfg.dropout, opts, site, queries)?;
        let xq = h.gather((0..layer.num_queries).collect(), &[layer.num_queries])?;
        let (h1, st) = norm(
            xq.add(attn)?,
            p(Slot::Norm1G),
            p(Slot::Norm1B),
            params,
            2 * l,
            opts.train,
        )?;
        batch_stats.push(st);
        let f = h1.matmul(p(Slot::W1))?.add_bias(p(Slot::B1))?.relu();
        let f = dropout(f, cfg.dropout, opts, site + 1, queries)?;
        let f = f.matmul(p(Slot::W2))?.add_bias(p(Slot::B2))?;
        let (h2, st) = norm(
            h1.add(f)?,
            p(Slot::Norm2G),
            p(Slot::Norm2B),
            params,
            2 * l + 1,
            opts.train,
        )?;
        batch_stats.push(st);
        h = h2;
    }
    let o = params.output_index();
    let logits = h.matmul(vars[o])?.add_bias(vars[o + 1])?;
    Ok(ForwardOutput {
        logits,
        scores,
        batch_stats,
    })
}

/// Forward pass without gradient bookkeeping beyond the local tape.
pub fn infer<T: Real>(
    params: &ModelParams<T>,
    features: &Tensor<T>,
    plan: &[FixedLayer],
    tau: f64,
) -> Result<(Tensor<T>, Vec<Tensor<f64>>)> {
    let tape = Tape::new();
    let vars = bind(&tape, params);
    let out = network_forward(
        &tape,
        params,
        &vars,
        features,
        plan,
        &ForwardOptions::eval(tau),
    )?;
    let logits = out.logits.value().clone();
    Ok((logits, out.scores))
}

/// Supervision for the rows of the last layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Class id per row; softmax cross-entropy.
    Classes(Vec<usize>),
    /// `rows × width` values in {0, 1}; binary cross-entropy with logits.
    Binary(Vec<f64>),
}

impl Targets {
    pub fn rows(&self, width: usize) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Binary(b) => b.len() / width.max(1),
        }
    }
}

/// Mean loss over all rows of `logits`.
pub fn loss<'t, T: Real>(logits: Var<'t, T>, targets: &Targets) -> Result<Var<'t, T>> {
    let (rows, width) = {
        let v = logits.value();
        v.dims2()?
    };
    if targets.rows(width) != rows {
        return Err(Error::Shape(format!(
            "{} target rows for {rows} logit rows",
            targets.rows(width)
        )));
    }
    let all: Vec<usize> = (0..rows).collect();
    match targets {
        Targets::Classes(c) => logits.cross_entropy(c.clone(), all),
        Targets::Binary(b) => {
            logits.bce_with_logits(b.iter().map(|&x| T::of_f64(x)).collect(), all)
        }
    }
}

/// Largest relative error between tape gradients and central differences of
/// the loss, over every parameter entry.
pub fn gradient_check(
    params: &ModelParams<f64>,
    features: &Tensor<f64>,
    plan: &[FixedLayer],
    targets: &Targets,
    opts: &ForwardOptions,
    h: f64,
    floor: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let vars = bind(&tape, params);
    let out = network_forward(&tape, params, &vars, features, plan, opts)?;
    let l = loss(out.logits, targets)?;
    let grads = tape.backward(l)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let numeric = crate::numerics::gradcheck::finite_difference(
        &params.tensors,
        |ts| {
            let probe = ModelParams {
                tensors: ts.to_vec(),
                ..params.clone()
            };
            let tape = Tape::new();
            let vars = bind(&tape, &probe);
            network_forward(&tape, &probe, &vars, features, plan, opts)
                .and_then(|o| loss(o.logits, targets))
                .map(|l| l.value().item())
                .unwrap_or(f64::NAN)
        },
        h,
    );
    Ok(crate::numerics::gradcheck::max_relative_error(
        &analytic, &numeric, floor,
    ))
}
