use std::collections::BTreeMap;

use super::*;
use crate::graph::{AttentionPattern, Csr, EdgeType, PatternLayer};
use crate::rng;
use crate::sampler::{ScoreLayer, ScoreMeta, ScoreSet};

fn score_set(rows: &[Vec<(usize, f64, EdgeType)>]) -> ScoreSet {
    let mut row_ptr = vec![0];
    let (mut cols, mut vals, mut types) = (vec![], vec![], vec![]);
    for r in rows {
        for &(j, a, t) in r {
            cols.push(j);
            vals.push(a);
            types.push(t);
        }
        row_ptr.push(cols.len());
    }
    ScoreSet {
        layers: vec![ScoreLayer {
            csr: Csr::from_parts(row_ptr, cols).unwrap(),
            scores: vals,
            types,
        }],
        meta: ScoreMeta::default(),
    }
}

fn pattern_of(s: &ScoreSet) -> AttentionPattern {
    AttentionPattern {
        layers: s
            .layers
            .iter()
            .map(|l| PatternLayer {
                csr: l.csr.clone(),
                types: l.types.clone(),
            })
            .collect(),
    }
}

#[test]
fn entropy_per_layer() {
    use EdgeType::*;
    let s = score_set(&[
        vec![(0, 1.0, SelfLoop), (1, 0.0, Graph)],
        vec![(0, 0.5, Graph), (1, 0.25, SelfLoop), (2, 0.25, Expander)],
        vec![
            (0, 0.25, Graph),
            (1, 0.25, Graph),
            (2, 0.25, SelfLoop),
            (3, 0.25, Graph),
        ],
        vec![(3, 1.0, SelfLoop)],
    ]);
    let e = attention_entropy(&s);
    let want = (0.0 + 1.0397207708399179 + 4f64.ln() + 0.0) / 4.0;
    assert!((e[0] - want).abs() < 1e-12);
}

#[test]
fn topk_examples() {
    use EdgeType::*;
    assert!((row_topk_mass(&[0.6, 0.2, 0.1, 0.1], 2) - 0.8).abs() < 1e-12);
    assert!((row_topk_mass(&[0.1; 10], 3) - 0.3).abs() < 1e-12);
    let s = score_set(&[
        vec![
            (0, 0.6, SelfLoop),
            (1, 0.2, Graph),
            (2, 0.1, Graph),
            (3, 0.1, Graph),
        ],
        vec![(0, 0.5, Graph), (1, 0.5, SelfLoop)],
        vec![(2, 1.0, SelfLoop)],
        vec![(0, 0.3, Graph), (3, 0.7, SelfLoop)],
    ]);
    let t = topk_mass(&s, 5);
    assert_eq!(t.len(), 5);
    for w in t.windows(2) {
        assert!(w[1].mean >= w[0].mean - 1e-15 && w[1].median >= w[0].median - 1e-15);
    }
    assert!((t[3].mean - 1.0).abs() < 1e-12 && (t[4].q1 - 1.0).abs() < 1e-12);
    assert!((t[0].mean - (0.6 + 0.5 + 1.0 + 0.7) / 4.0).abs() < 1e-12);
    assert!(t[0].iqr() >= 0.0);
}

#[test]
fn edge_types_self_only_and_split() {
    use EdgeType::*;
    let s = score_set(&[vec![(0, 1.0, SelfLoop)], vec![(1, 1.0, SelfLoop)]]);
    let m = edge_type_attribution(&s, &pattern_of(&s), None).unwrap();
    assert_eq!(m.overall, [0.0, 0.0, 1.0]);

    let s = score_set(&[
        vec![(0, 0.0, SelfLoop), (1, 0.5, Graph), (2, 0.5, Expander)],
        vec![(1, 1.0, SelfLoop)],
        vec![(2, 1.0, SelfLoop)],
    ]);
    let per_node = node_type_masses(&s, &pattern_of(&s), 0).unwrap();
    assert_eq!(per_node[0], [0.5, 0.5, 0.0]);
    for m in &per_node {
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let only0 = edge_type_attribution(&s, &pattern_of(&s), Some(&[0])).unwrap();
    assert_eq!(only0.overall, [0.5, 0.5, 0.0]);
}

#[test]
fn edge_types_need_pattern_support() {
    use EdgeType::*;
    let s = score_set(&[
        vec![(0, 0.5, SelfLoop), (1, 0.5, Graph)],
        vec![(1, 1.0, SelfLoop)],
    ]);
    let p = pattern_of(&score_set(&[
        vec![(0, 1.0, SelfLoop)],
        vec![(1, 1.0, SelfLoop)],
    ]));
    assert!(edge_type_attribution(&s, &p, None).is_err());
}

#[test]
fn jlt_identity_is_exact() {
    let mut r = rng::stream(3, &[]);
    let q = random_unit_rows(16, 32, &mut r);
    let k = random_unit_rows(16, 32, &mut r);
    let id = crate::numerics::Tensor::<f64>::identity(32);
    assert!(jlt_deviation(&q, &k, &PatternLayer::complete(16), &id).unwrap() < 1e-12);
    assert!(jlt_compress_check(&q, &k, &PatternLayer::complete(16), 32, 1, 0).is_err());
}

fn jlt_runs(d: usize) -> Vec<f64> {
    let mut r = rng::stream(11, &[]);
    let q = random_unit_rows(64, 512, &mut r);
    let k = random_unit_rows(64, 512, &mut r);
    jlt_compress_check(&q, &k, &PatternLayer::complete(64), d, 50, d as u64).unwrap()
}

#[test]
fn jlt_deviation_shrinks_with_dimension() {
    let d16 = jlt_runs(16);
    let d256 = jlt_runs(256);
    let paired = d16.iter().zip(&d256).filter(|(a, b)| b <= a).count();
    assert!(paired as f64 >= 0.95 * d16.len() as f64, "{paired}");
}

#[test]
fn jlt_quadrupling_halves_deviation() {
    // d = 16 sits outside the small-error regime, so the fit starts at 32
    let ds = [32usize, 64, 128, 256];
    let x: Vec<f64> = ds.iter().map(|&d| (d as f64).ln()).collect();
    let y: Vec<f64> = ds.iter().map(|&d| median(&jlt_runs(d)).ln()).collect();
    let ratio = 4f64.powf(slope(&x, &y));
    assert!((0.35..=0.65).contains(&ratio), "ratio {ratio}");
}

#[test]
fn spectral_norm_matches_svd() {
    let mut r = rng::stream(5, &[]);
    let a = SparseMatrix::random_stochastic(20, 5, 2.0, &mut r);
    let mut dense = nalgebra::DMatrix::<f64>::zeros(20, 20);
    let mut entries = vec![];
    for (i, j) in a.csr.edges() {
        let v = a.get(i, j) - 0.1;
        dense[(i, j)] = v;
        entries.push((i, j, v));
    }
    let svd = dense.singular_values().max();
    assert!((spectral_norm(20, &entries) - svd).abs() < 1e-5 * svd);
}

#[test]
fn sampled_identity_keeps_diagonal_support() {
    let a = SparseMatrix::identity(16);
    for seed in 0..5 {
        let c = spectral_sample_check(&a, 40, &mut rng::stream(seed, &[])).unwrap();
        assert!(c.support_ok);
        assert!(c.sampled_entries <= 16);
    }
}

#[test]
fn spectral_sampling_converges_on_uniform_rows() {
    let n = 64usize;
    let s = (64.0 * n as f64 * (n as f64).ln()).ceil() as usize;
    let a = SparseMatrix::random_stochastic(n, n, 0.0, &mut rng::stream(1, &[]));
    let ok = (0..20)
        .filter(|&seed| {
            spectral_sample_check(&a, s, &mut rng::stream(seed, &[7]))
                .unwrap()
                .rel_error
                < 0.5
        })
        .count();
    assert!(ok >= 18, "{ok}");
}

#[test]
fn spectral_error_is_monotone_in_samples() {
    let a = SparseMatrix::random_stochastic(64, 8, 2.0, &mut rng::stream(2, &[]));
    let mut prev = f64::INFINITY;
    for e in [8u32, 10, 12, 14] {
        let errs: Vec<f64> = (0..20)
            .map(|seed| {
                spectral_sample_check(&a, 1 << e, &mut rng::stream(seed, &[e as u64]))
                    .unwrap()
                    .rel_error
            })
            .collect();
        let m = median(&errs);
        assert!(m <= prev, "{m} > {prev}");
        prev = m;
    }
}

#[test]
fn noisy_sampling_matches_exact_when_equal() {
    let a = SparseMatrix::random_stochastic(32, 6, 2.0, &mut rng::stream(4, &[]));
    let x = spectral_sample_check(&a, 500, &mut rng::stream(9, &[])).unwrap();
    let y = noisy_sampling_check(&a, &a, 1.0, 500, &mut rng::stream(9, &[])).unwrap();
    assert_eq!(x, y);
}

#[test]
fn noisy_sampling_precondition() {
    let a = SparseMatrix::random_stochastic(8, 3, 1.0, &mut rng::stream(4, &[]));
    let id = SparseMatrix::identity(8);
    let err = noisy_sampling_check(&a, &id, 1e6, 100, &mut rng::stream(0, &[])).unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)));
    let uni = SparseMatrix::random_stochastic(8, 8, 0.0, &mut rng::stream(0, &[]));
    let alpha = underestimate_ratio(&a, &uni);
    assert!(noisy_sampling_check(&a, &uni, alpha * 0.9, 100, &mut rng::stream(0, &[])).is_err());
    assert!(noisy_sampling_check(&a, &uni, alpha, 100, &mut rng::stream(0, &[])).is_ok());
}

#[test]
fn noisy_sampling_costs_alpha_more_samples() {
    let n = 64;
    let sharp = SparseMatrix::random_stochastic(n, 8, 2.0, &mut rng::stream(6, &[]));
    // uniform rows over the same support
    let p = sharp.csr.row_ptr();
    let vals = (0..n)
        .flat_map(|i| vec![1.0 / (p[i + 1] - p[i]) as f64; p[i + 1] - p[i]])
        .collect();
    let uni = SparseMatrix::new(sharp.csr.clone(), vals).unwrap();
    let alpha = underestimate_ratio(&sharp, &uni);
    let s = 2048;
    let exact: Vec<f64> = (0..20)
        .map(|k| {
            spectral_sample_check(&sharp, s, &mut rng::stream(k, &[1]))
                .unwrap()
                .rel_error
        })
        .collect();
    let noisy: Vec<f64> = (0..20)
        .map(|k| {
            noisy_sampling_check(
                &sharp,
                &uni,
                alpha,
                (alpha * s as f64).ceil() as usize,
                &mut rng::stream(k, &[2]),
            )
            .unwrap()
            .rel_error
        })
        .collect();
    let (e, m) = (median(&exact), median(&noisy));
    assert!(
        m <= 1.5 * e && m >= 0.5 * e,
        "exact {e} noisy {m} alpha {alpha}"
    );
}

#[test]
fn consistency_on_fixed_runs() {
    use EdgeType::*;
    let mk = |a: f64| {
        score_set(&[
            vec![(0, a, SelfLoop), (1, 1.0 - a, Graph)],
            vec![(0, 0.5, Graph), (1, 0.5, SelfLoop)],
            vec![(2, 1.0, SelfLoop)],
        ])
    };
    let mut runs = BTreeMap::new();
    runs.insert(
        4,
        (0..4)
            .map(|r| mk(0.8 + 0.01 * r as f64))
            .collect::<Vec<_>>(),
    );
    runs.insert(
        8,
        (0..6)
            .map(|r| mk(0.9 + 0.005 * r as f64))
            .collect::<Vec<_>>(),
    );
    let rep = compare_runs(&runs, 8, 1).unwrap();
    assert_eq!(rep.cells.len(), 3);
    assert_eq!(rep.labels(), ["width_4", "width_8", "uniform", "random"]);
    let c0 = &rep.cells[0];
    // the reference against itself is closest
    assert!(
        c0.by_width[1] < c0.by_width[0]
            && c0.by_width[1] < c0.uniform
            && c0.by_width[1] < c0.random
    );
    // a single-key row is identical everywhere
    let c2 = &rep.cells[2];
    assert!(c2.uniform.abs() < 1e-12 && c2.random.abs() < 1e-12 && c2.by_width[0].abs() < 1e-12);
    assert!(compare_runs(&runs, 16, 1).is_err());
}

#[test]
fn table_csv() {
    let mut t = Table::new(["a", "b"]);
    t.push(vec![num(1.5), num(2.0)]);
    assert_eq!(t.to_csv(), "a,b\n1.5,2\n");
}
