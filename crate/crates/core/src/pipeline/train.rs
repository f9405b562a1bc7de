use serde::{Deserialize, Serialize};

use super::config::{Ablation, Phase, TrainConfig};
use super::predict::predict_probs;
use super::task::Task;
use crate::attention::{
    bind, full_plan, loss, network_forward, temperature_at, FixedLayer, ForwardOptions,
    ModelConfig, ModelParams,
};
use crate::error::{Error, Result};
use crate::graph::{AttentionPattern, Graph, Split};
use crate::numerics::{AdamW, CosineSchedule, Tape, Tensor};
use crate::rng;
use crate::sampler::{resample_epoch, SamplerConfig, ScoreMeta, ScoreSet, Selection};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: f64,
    pub tau: f64,
}

pub struct EstimatorRun {
    pub params: ModelParams<f32>,
    pub scores: ScoreSet,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch ran and the initialization was kept.
    pub best_epoch: usize,
    pub best_val: f64,
}

pub struct FinalRun {
    pub params: ModelParams<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

fn model_config(g: &Graph, cfg: &TrainConfig, task: Task) -> ModelConfig {
    let mut m = match cfg.phase {
        Phase::Estimator => {
            ModelConfig::estimator(g.num_features(), cfg.width, cfg.layers, task.out_dim())
        }
        Phase::Final => ModelConfig::final_net(
            g.num_features(),
            cfg.width,
            cfg.heads,
            cfg.layers,
            task.out_dim(),
            cfg.dropout,
        ),
    };
    m.norm = cfg.norm;
    m.vnorm = cfg.phase == Phase::Estimator && cfg.ablation != Ablation::NoVnorm;
    m
}

fn non_finite(epoch: usize, what: &str) -> Error {
    Error::Numeric(format!("{what} became non-finite in epoch {epoch}"))
}

/// Loss and parameter update for one plan. Returns the loss and the batch
/// statistics seen by each norm site.
fn step(
    params: &mut ModelParams<f32>,
    opt: &mut AdamW<f32>,
    features: &Tensor<f32>,
    plan: &[FixedLayer],
    rows: &[usize],
    task: Task,
    g: &Graph,
    opts: &ForwardOptions,
    epoch: usize,
    momentum: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let vars = bind(&tape, params);
    let out = network_forward(&tape, params, &vars, features, plan, opts)?;
    let queries = plan.last().expect("plan has layers").queries();
    let nodes: Vec<usize> = rows.iter().map(|&r| queries[r]).collect();
    let picked = out.logits.gather(rows.to_vec(), &[rows.len()])?;
    let l = loss(picked, &task.targets(&g.labels, &nodes)?)?;
    let value = l.value().item() as f64;
    if !value.is_finite() {
        return Err(non_finite(epoch, "training loss"));
    }
    let grads = tape.backward(l)?;
    let g: Vec<Tensor<f32>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    opt.step(&mut params.tensors, &g, epoch - 1).map_err(|e| {
        if e.is_numeric() {
            non_finite(epoch, "gradient")
        } else {
            e
        }
    })?;
    params.update_running(&out.batch_stats, momentum);
    Ok(value)
}

/// Trains the narrow network on the whole augmented pattern and keeps the
/// scores of the epoch with the best validation metric.
pub fn train_estimator(
    g: &Graph,
    pattern: &AttentionPattern,
    cfg: &TrainConfig,
) -> Result<EstimatorRun> {
    cfg.validate()?;
    if cfg.phase != Phase::Estimator {
        return Err(Error::Config(
            "train_estimator needs an estimator config".into(),
        ));
    }
    if pattern.num_layers() != cfg.layers || pattern.n() != g.n() {
        return Err(Error::Config(format!(
            "pattern has {} layers over {} nodes; config wants {} layers over {}",
            pattern.num_layers(),
            pattern.n(),
            cfg.layers,
            g.n()
        )));
    }
    let task = Task::of(&g.labels);
    let mut params = ModelParams::<f32>::init(model_config(g, cfg, task), cfg.seed)?;
    let features = g.features.cast::<f32>();
    let plan = full_plan(pattern);
    let train = g.nodes_in(Split::Train);
    let val = g.nodes_in(Split::Val);
    let sched = cfg.effective_temperature();
    let mut opt = AdamW::new(&params.tensors, cfg.lr, cfg.weight_decay, schedule(cfg));

    let evaluate = |p: &ModelParams<f32>, tau: f64| -> Result<(f64, Vec<Tensor<f64>>)> {
        let (logits, scores) = crate::attention::infer(p, &features, &plan, tau)?;
        let logits = logits.cast::<f64>();
        if !logits.all_finite() {
            return Err(Error::Numeric("validation logits are non-finite".into()));
        }
        let rows = Tensor::new(
            &[val.len(), logits.row_len()],
            val.iter().flat_map(|&v| logits.row(v).to_vec()).collect(),
        )?;
        Ok((
            task.metric(&task.probabilities(&rows), &g.labels, &val),
            scores,
        ))
    };

    let (mut best_val, mut best_scores) = evaluate(&params, temperature_at(&sched, 0))?;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let tau = temperature_at(&sched, epoch);
        let opts = ForwardOptions {
            tau,
            train: true,
            dropout_seed: rng::derive_seed(cfg.seed, &[epoch as u64, 0]),
        };
        let loss = step(
            &mut params,
            &mut opt,
            &features,
            &plan,
            &train,
            task,
            g,
            &opts,
            epoch,
            cfg.bn_momentum,
        )?;
        let (metric, scores) = evaluate(&params, tau)?;
        history.push(EpochRecord {
            epoch,
            loss,
            val_metric: metric,
            tau,
        });
        if best_epoch == 0 || metric > best_val {
            best_val = metric;
            best_scores = scores;
            best_params = params.clone();
            best_epoch = epoch;
        }
    }
    let meta = ScoreMeta {
        width: cfg.width,
        best_epoch,
        ablation: if cfg.ablation.affects_estimator() {
            cfg.ablation.name()
        } else {
            "none"
        }
        .into(),
    };
    let scores = ScoreSet::from_full_plan(&plan, &best_scores, meta)?;
    Ok(EstimatorRun {
        params: best_params,
        scores,
        history,
        best_epoch,
        best_val,
    })
}

fn schedule(cfg: &TrainConfig) -> CosineSchedule {
    CosineSchedule {
        warmup_epochs: cfg.warmup_epochs,
        ..CosineSchedule::new(cfg.epochs)
    }
}

pub(crate) fn sampler_config(cfg: &TrainConfig) -> SamplerConfig {
    SamplerConfig {
        selection: if cfg.ablation == Ablation::Max {
            Selection::Max
        } else {
            Selection::Reservoir
        },
        k_prime: cfg.k_prime,
        tail_eps: cfg.tail_eps,
    }
}

/// Score rows the final network samples from, after the uniform ablation and
/// the estimator-variant consistency check.
pub fn effective_scores(scores: &ScoreSet, cfg: &TrainConfig) -> Result<ScoreSet> {
    if cfg.ablation.affects_estimator() && scores.meta.ablation != cfg.ablation.name() {
        return Err(Error::Config(format!(
            "ablation `{}` needs scores from a matching estimator run, found `{}`",
            cfg.ablation.name(),
            scores.meta.ablation
        )));
    }
    if scores.num_layers() != cfg.layers {
        return Err(Error::Config(format!(
            "scores cover {} layers, config wants {}",
            scores.num_layers(),
            cfg.layers
        )));
    }
    Ok(if cfg.ablation == Ablation::Uniform {
        scores.uniform()
    } else {
        scores.clone()
    })
}

/// How each epoch feeds the final network.
enum Feed<'a> {
    Sampled(&'a ScoreSet),
    Full(Vec<FixedLayer>),
}

fn train_wide(g: &Graph, scores: &ScoreSet, cfg: &TrainConfig, full: bool) -> Result<FinalRun> {
    cfg.validate()?;
    if cfg.phase != Phase::Final {
        return Err(Error::Config(
            "final training needs a final-network config".into(),
        ));
    }
    let eff = effective_scores(scores, cfg)?;
    if eff.n() != g.n() {
        return Err(Error::Dimension(format!(
            "scores cover {} nodes, graph has {}",
            eff.n(),
            g.n()
        )));
    }
    let feed = if full {
        Feed::Full(full_plan(&eff.pattern()))
    } else {
        Feed::Sampled(&eff)
    };
    let task = Task::of(&g.labels);
    let mut params = ModelParams::<f32>::init(model_config(g, cfg, task), cfg.seed)?;
    let features = g.features.cast::<f32>();
    let train = g.nodes_in(Split::Train);
    let val = g.nodes_in(Split::Val);
    let scfg = sampler_config(cfg);
    let mut opt = AdamW::new(&params.tensors, cfg.lr, cfg.weight_decay, schedule(cfg));
    let evaluate = |p: &ModelParams<f32>, epoch: usize| -> Result<f64> {
        let probs = predict_probs(
            p,
            g,
            &eff,
            &cfg.degs,
            &val,
            cfg.eval_samples,
            cfg.batch_size,
            &scfg,
            rng::derive_seed(cfg.seed, &[0xe7a1, epoch as u64]),
        )?;
        Ok(task.metric(&probs, &g.labels, &val))
    };
    let mut best_val = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let opts = |b: usize| ForwardOptions {
            tau: 1.0,
            train: true,
            dropout_seed: rng::derive_seed(cfg.seed, &[epoch as u64, b as u64]),
        };
        let (mut total, mut count) = (0.0, 0usize);
        match &feed {
            Feed::Full(plan) => {
                let l = step(
                    &mut params,
                    &mut opt,
                    &features,
                    plan,
                    &train,
                    task,
                    g,
                    &opts(0),
                    epoch,
                    cfg.bn_momentum,
                )?;
                total += l * train.len() as f64;
                count += train.len();
            }
            Feed::Sampled(s) => {
                let plans = resample_epoch(
                    s,
                    &cfg.degs,
                    &train,
                    cfg.batch_size,
                    &scfg,
                    cfg.seed,
                    epoch as u64,
                )?;
                for (b, plan) in plans.iter().enumerate() {
                    let rows: Vec<usize> = (0..plan.seeds.len()).collect();
                    let l = step(
                        &mut params,
                        &mut opt,
                        &features,
                        &plan.layers,
                        &rows,
                        task,
                        g,
                        &opts(b),
                        epoch,
                        cfg.bn_momentum,
                    )?;
                    total += l * rows.len() as f64;
                    count += rows.len();
                }
            }
        }
        let metric = evaluate(&params, epoch)?;
        history.push(EpochRecord {
            epoch,
            loss: total / count.max(1) as f64,
            val_metric: metric,
            tau: 1.0,
        });
        if best_epoch == 0 || metric > best_val {
            best_val = metric;
            best_params = params.clone();
            best_epoch = epoch;
        }
    }
    if best_epoch == 0 {
        best_val = evaluate(&params, 0)?;
    }
    Ok(FinalRun {
        params: best_params,
        history,
        best_epoch,
        best_val,
    })
}

/// Trains the wide network on per-epoch resampled fixed-degree batches.
pub fn train_final(g: &Graph, scores: &ScoreSet, cfg: &TrainConfig) -> Result<FinalRun> {
    train_wide(g, scores, cfg, false)
}

/// Same network and schedule as [`train_final`] but every epoch is one step
/// on the whole score support without sampling or batching.
pub fn train_full_graph(g: &Graph, scores: &ScoreSet, cfg: &TrainConfig) -> Result<FinalRun> {
    train_wide(g, scores, cfg, true)
}
