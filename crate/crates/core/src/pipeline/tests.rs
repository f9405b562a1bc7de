use super::*;
use crate::attention::ModelParams;
use crate::datasets::{gen_bridge_task, SyntheticSpec};
use crate::graph::{
    augment, build_expander, AttentionPattern, Csr, ExpanderGraph, Graph, Labels, Split,
};
use crate::numerics::Tensor;
use crate::sampler::{ScoreLayer, ScoreMeta, ScoreSet};

fn small_task(seed: u64) -> (Graph, AttentionPattern) {
    let spec = SyntheticSpec {
        components: 4,
        component_size: 6,
        bridges: 2,
        ..SyntheticSpec::bridge(seed)
    };
    let g = gen_bridge_task(&spec).unwrap();
    let x = build_expander(g.n(), 1, 0.0, 10, seed).unwrap();
    let p = augment(&g, &x, 2).unwrap();
    (g, p)
}

fn estimator(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        ..TrainConfig::estimator()
    }
}

fn max_degs(s: &ScoreSet) -> Vec<usize> {
    s.layers.iter().map(|l| l.max_degree()).collect()
}

#[test]
fn one_epoch_scores_cover_pattern() {
    let (g, p) = small_task(1);
    let run = train_estimator(&g, &p, &estimator(1, 0)).unwrap();
    assert_eq!(run.history.len(), 1);
    assert_eq!(run.scores.pattern().layers.len(), p.layers.len());
    for (s, l) in run.scores.layers.iter().zip(&p.layers) {
        assert_eq!(s.csr, l.csr);
        assert_eq!(s.types, l.types);
        for i in 0..s.csr.n() {
            let sum: f64 = s.row(i).1.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn estimator_is_deterministic() {
    let (g, p) = small_task(2);
    let a = train_estimator(&g, &p, &estimator(5, 3)).unwrap();
    let b = train_estimator(&g, &p, &estimator(5, 3)).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.history, b.history);
}

#[test]
fn estimator_logs_temperature_schedule() {
    let (g, p) = small_task(2);
    let run = train_estimator(&g, &p, &estimator(8, 0)).unwrap();
    let taus: Vec<f64> = run.history.iter().map(|r| r.tau).collect();
    assert_eq!(&taus[..5], &[1.0; 5]);
    assert_eq!(taus[5], 0.99);
    assert_eq!(taus[7], 0.970299);
    let flat = TrainConfig {
        ablation: Ablation::NoTemp,
        ..estimator(8, 0)
    };
    let run = train_estimator(&g, &p, &flat).unwrap();
    assert!(run.history.iter().all(|r| r.tau == 1.0));
    assert_eq!(run.scores.meta.ablation, "no-temp");
}

#[test]
fn best_checkpoint_matches_history() {
    let (g, p) = small_task(3);
    let run = train_estimator(&g, &p, &estimator(12, 1)).unwrap();
    let max = run
        .history
        .iter()
        .map(|r| r.val_metric)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(run.best_val >= max);
    if run.best_epoch > 0 {
        assert_eq!(run.history[run.best_epoch - 1].val_metric, run.best_val);
        assert_eq!(run.scores.meta.best_epoch, run.best_epoch);
    }
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        ..TrainConfig::final_net(vec![3, 3])
    };
    let fr = train_final(&g, &run.scores, &cfg).unwrap();
    let max = fr
        .history
        .iter()
        .map(|r| r.val_metric)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(fr.best_val, max);
    assert_eq!(fr.history[fr.best_epoch - 1].val_metric, max);
}

#[test]
fn zero_epochs_keep_initialization() {
    let (g, p) = small_task(4);
    let est = train_estimator(&g, &p, &estimator(0, 0)).unwrap();
    assert_eq!(est.best_epoch, 0);
    let cfg = TrainConfig {
        epochs: 0,
        seed: 9,
        ..TrainConfig::final_net(vec![2, 2])
    };
    let fr = train_final(&g, &est.scores, &cfg).unwrap();
    let init = ModelParams::<f32>::init(fr.params.config.clone(), 9).unwrap();
    assert_eq!(fr.params, init);
    assert!(fr.history.is_empty());
}

#[test]
fn full_degree_training_equals_full_graph() {
    let (g, p) = small_task(5);
    let est = train_estimator(&g, &p, &estimator(3, 0)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        norm: crate::attention::NormKind::Layer,
        batch_size: g.n(),
        seed: 4,
        ..TrainConfig::final_net(max_degs(&est.scores))
    };
    let a = train_final(&g, &est.scores, &cfg).unwrap();
    let b = train_full_graph(&g, &est.scores, &cfg).unwrap();
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!(
            (x.loss - y.loss).abs() <= 1e-4 * y.loss.abs(),
            "{} vs {}",
            x.loss,
            y.loss
        );
    }
}

#[test]
fn uniform_ablation_rows_are_uniform() {
    let (g, p) = small_task(6);
    let est = train_estimator(&g, &p, &estimator(3, 0)).unwrap();
    let cfg = TrainConfig {
        ablation: Ablation::Uniform,
        ..TrainConfig::final_net(vec![2, 2])
    };
    let eff = effective_scores(&est.scores, &cfg).unwrap();
    for l in &eff.layers {
        for i in 0..l.csr.n() {
            let row = l.row(i).1;
            assert!(row
                .iter()
                .all(|&a| (a - 1.0 / row.len() as f64).abs() < 1e-15));
        }
    }
}

#[test]
fn ablation_needs_matching_scores() {
    let (g, p) = small_task(6);
    let est = train_estimator(&g, &p, &estimator(1, 0)).unwrap();
    let cfg = TrainConfig {
        ablation: Ablation::NoVnorm,
        ..TrainConfig::final_net(vec![2, 2])
    };
    assert!(matches!(
        train_final(&g, &est.scores, &cfg),
        Err(crate::Error::Config(_))
    ));
    let bad = TrainConfig::final_net(vec![2, 2, 2]);
    assert!(matches!(
        train_final(&g, &est.scores, &bad),
        Err(crate::Error::Config(_))
    ));
    let mut two_heads = estimator(1, 0);
    two_heads.heads = 2;
    assert!(train_estimator(&g, &p, &two_heads).is_err());
}

/// One layer over 10 nodes; row i holds keys 0..lens[i], later rows are empty.
fn rows_fixture(lens: &[usize]) -> ScoreSet {
    let mut row_ptr = vec![0];
    let mut cols = vec![];
    for i in 0..10 {
        cols.extend(0..lens.get(i).copied().unwrap_or(0));
        row_ptr.push(cols.len());
    }
    let csr = Csr::from_parts(row_ptr, cols).unwrap();
    let nnz = csr.nnz();
    ScoreSet {
        layers: vec![ScoreLayer {
            scores: vec![0.1; nnz],
            types: vec![crate::graph::EdgeType::Graph; nnz],
            csr,
        }],
        meta: ScoreMeta::default(),
    }
}

#[test]
fn edge_percent_examples() {
    let full = rows_fixture(&[10; 10]);
    assert_eq!(edge_percent(&full, &[10], 100).unwrap(), 1.0);
    assert_eq!(
        edge_percent(&rows_fixture(&[10; 4]), &[1], 40).unwrap(),
        0.1
    );
    assert_eq!(
        edge_percent(&rows_fixture(&[3, 5, 10]), &[5], 18).unwrap(),
        13.0 / 18.0
    );
    assert!(edge_percent(&full, &[5, 5], 100).is_err());
}

fn trained_final(
    seed: u64,
    degs: Option<Vec<usize>>,
) -> (Graph, ScoreSet, TrainConfig, ModelParams<f32>) {
    let (g, p) = small_task(seed);
    let est = train_estimator(&g, &p, &estimator(10, 0)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        ..TrainConfig::final_net(degs.unwrap_or_else(|| max_degs(&est.scores)))
    };
    let fr = train_final(&g, &est.scores, &cfg).unwrap();
    (g, est.scores, cfg, fr.params)
}

#[test]
fn batch_size_does_not_change_full_degree_logits() {
    let (g, scores, cfg, params) = trained_final(7, None);
    let test = g.nodes_in(Split::Test);
    let scfg = sampler_config(&cfg);
    let one = predict_logits(&params, &g, &scores, &cfg.degs, &test, 1, &scfg, 0).unwrap();
    let all = predict_logits(&params, &g, &scores, &cfg.degs, &test, test.len(), &scfg, 5).unwrap();
    for (a, b) in one.data().iter().zip(all.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn averaging_samples_shrinks_spread() {
    let (g, scores, cfg, params) = trained_final(8, Some(vec![1, 1]));
    let nodes: Vec<usize> = (0..g.n()).collect();
    let scfg = sampler_config(&cfg);
    let spread = |k: usize| {
        let reps: Vec<Tensor<f64>> = (0..40)
            .map(|r| {
                predict_probs(
                    &params,
                    &g,
                    &scores,
                    &cfg.degs,
                    &nodes,
                    k,
                    64,
                    &scfg,
                    1000 + r,
                )
                .unwrap()
            })
            .collect();
        let mut total = 0.0;
        for v in 0..nodes.len() {
            let xs: Vec<f64> = reps.iter().map(|t| t.at(v, 1)).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            total += xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        }
        (total / nodes.len() as f64).sqrt()
    };
    let ratio = spread(16) / spread(1);
    assert!((0.15..=0.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn self_loop_only_node_sees_itself() {
    let (g0, _) = small_task(9);
    // node 0 is cut off from everything
    let edges: Vec<(usize, usize)> = g0
        .adjacency
        .edges()
        .filter(|&(i, j)| i != 0 && j != 0)
        .collect();
    let g = Graph::new(
        Csr::from_edges(g0.n(), &edges, false).unwrap(),
        g0.features.clone(),
        g0.labels.clone(),
        g0.split.clone(),
    )
    .unwrap();
    let p = augment(&g, &ExpanderGraph::empty(g.n()), 2).unwrap();
    let est = train_estimator(&g, &p, &estimator(2, 0)).unwrap();
    assert_eq!(est.scores.layers[0].row(0).0, &[0]);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::final_net(max_degs(&est.scores))
    };
    let params = train_final(&g, &est.scores, &cfg).unwrap().params;
    let scfg = sampler_config(&cfg);
    let logit =
        |g: &Graph| predict_logits(&params, g, &est.scores, &cfg.degs, &[0], 1, &scfg, 0).unwrap();
    let base = logit(&g);
    let mut others = g.clone();
    for v in 1..g.n() {
        for c in 0..g.num_features() {
            others.features.data_mut()[v * g.num_features() + c] += 3.0;
        }
    }
    assert_eq!(logit(&others), base);
    let mut own = g.clone();
    own.features.data_mut()[0] += 3.0;
    assert_ne!(logit(&own), base);
}

#[test]
fn unknown_nodes_are_rejected() {
    let (g, scores, cfg, params) = trained_final(10, Some(vec![2, 2]));
    let r = predict_logits(
        &params,
        &g,
        &scores,
        &cfg.degs,
        &[g.n()],
        1,
        &sampler_config(&cfg),
        0,
    );
    assert!(matches!(r, Err(crate::Error::Contract(_))));
}

#[test]
fn run_dir_round_trips() {
    let (g, p) = small_task(11);
    let est = train_estimator(&g, &p, &estimator(3, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run");
    let rd = RunDir::create(&path, false).unwrap();
    rd.write_scores(&est.scores).unwrap();
    rd.write_model(&est.params).unwrap();
    rd.write_history(&est.history).unwrap();
    let back = rd.read_scores(&g.adjacency).unwrap();
    assert_eq!(back.layers.len(), est.scores.layers.len());
    for (a, b) in back.layers.iter().zip(&est.scores.layers) {
        assert_eq!(a.csr, b.csr);
        assert_eq!(a.types, b.types);
        assert!(a
            .scores
            .iter()
            .zip(&b.scores)
            .all(|(x, y)| (x - y).abs() < 1e-12));
    }
    assert_eq!(rd.read_model().unwrap(), est.params);
    assert_eq!(read_history(&rd.file("history.csv")).unwrap(), est.history);
    assert!(matches!(
        RunDir::create(&path, false),
        Err(crate::Error::Config(_))
    ));
    assert!(RunDir::create(&path, true).is_ok());
}

#[test]
fn task_kinds() {
    let l = Labels::classes(vec![0, 1, 1, 0]);
    assert_eq!(Task::of(&l), Task::Binary);
    assert_eq!(
        Task::of(&Labels::classes(vec![0, 2, 1])),
        Task::Multiclass(3)
    );
    assert_eq!(
        roc_auc(&[0.1, 0.9, 0.8, 0.2], &[false, true, true, false]),
        Some(1.0)
    );
    assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
    assert_eq!(roc_auc(&[0.5], &[true]), None);
}
