//! C ABI over the gtsparse pipeline.
//!
//! Objects cross the boundary as opaque handles created by `gt_*_new`,
//! `gt_*_load` or `gt_*_train` calls and released with the matching
//! `gt_*_free`. Every fallible call returns a [`GtStatus`]; on failure the
//! message is available from [`gt_last_error_message`] on the same thread.
//! Panics never unwind into C, they are reported as `GT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gtsparse::attention::{temperature_at, ModelParams, TemperatureSchedule};
use gtsparse::datasets::{gen_bridge_task, SyntheticSpec};
use gtsparse::graph::{
    augment, build_expander, load_graph_dir, AttentionPattern, Graph, DEFAULT_MAX_RETRIES,
    DEFAULT_MIN_GAP,
};
use gtsparse::pipeline::{
    effective_scores, predict_probs, sampler_config, train_estimator, train_final, TrainConfig,
};
use gtsparse::sampler::{reservoir_sample, ScoreSet};
use gtsparse::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Construction = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A loaded or generated graph with features, labels and split.
pub struct GtGraph(Graph);
/// An augmented attention pattern.
pub struct GtPattern(AttentionPattern);
/// Attention scores of a trained estimator.
pub struct GtScores(ScoreSet);
/// A trained final network together with the scores it samples from.
pub struct GtModel {
    params: ModelParams<f32>,
    scores: ScoreSet,
    config: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> GtStatus {
    match e {
        Error::Io { .. } => GtStatus::Io,
        Error::Format { .. } | Error::Json(_) => GtStatus::Format,
        Error::Numeric(_) => GtStatus::Numeric,
        Error::Construction { .. } => GtStatus::Construction,
        _ => GtStatus::InvalidArgument,
    }
}

struct Fail(GtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GtStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GtStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GtStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GtStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_out<T: Copy>(
    out: *mut T,
    cap: usize,
    values: &[T],
    len_out: *mut usize,
) -> Result<(), Fail> {
    if !len_out.is_null() {
        *len_out = values.len();
    }
    if values.len() > cap {
        return Err(Fail(
            GtStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", values.len()),
        ));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next `gt_*` call on the same thread.
#[no_mangle]
pub extern "C" fn gt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a dataset directory (edges.tsv, features.csv, labels.csv, optional split.csv).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gt_graph_load(dir: *const c_char, out: *mut *mut GtGraph) -> GtStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        put(out, GtGraph(load_graph_dir(&dir, true)?))
    })
}

/// Generates the two-color bridge task with default sizes.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gt_graph_generate_bridge(seed: u64, out: *mut *mut GtGraph) -> GtStatus {
    guard(|| put(out, GtGraph(gen_bridge_task(&SyntheticSpec::bridge(seed))?)))
}

/// Node count, 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn gt_graph_num_nodes(g: *const GtGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.n())
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gt_graph_free(g: *mut GtGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Builds an expander of `cycles` Hamiltonian cycles and the augmented
/// pattern with `layers` identical layers.
///
/// # Safety
/// `g` must be a live graph handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gt_pattern_build(
    g: *const GtGraph,
    cycles: usize,
    layers: usize,
    seed: u64,
    out: *mut *mut GtPattern,
) -> GtStatus {
    guard(|| {
        let g = &href(g, "graph")?.0;
        let x = build_expander(g.n(), cycles, DEFAULT_MIN_GAP, DEFAULT_MAX_RETRIES, seed)?;
        put(out, GtPattern(augment(g, &x, layers)?))
    })
}

/// Augmented attention edges per layer.
///
/// # Safety
/// `p` must be null or a live pattern handle.
#[no_mangle]
pub unsafe extern "C" fn gt_pattern_num_edges(p: *const GtPattern) -> usize {
    p.as_ref().map_or(0, |p| p.0.m_aug())
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gt_pattern_free(p: *mut GtPattern) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Trains the one-head estimator with default settings apart from the
/// arguments and returns its attention scores.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gt_estimator_train(
    g: *const GtGraph,
    p: *const GtPattern,
    width: usize,
    epochs: usize,
    seed: u64,
    out: *mut *mut GtScores,
) -> GtStatus {
    guard(|| {
        let (g, p) = (&href(g, "graph")?.0, &href(p, "pattern")?.0);
        let cfg = TrainConfig {
            width,
            epochs,
            seed,
            layers: p.num_layers(),
            ..TrainConfig::estimator()
        };
        put(out, GtScores(train_estimator(g, p, &cfg)?.scores))
    })
}

/// Loads scores written by `gt_scores_save` or the command line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string, `g` a live graph handle and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gt_scores_load(
    path: *const c_char,
    g: *const GtGraph,
    out: *mut *mut GtScores,
) -> GtStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let g = &href(g, "graph")?.0;
        put(out, GtScores(ScoreSet::load_text(&path, &g.adjacency)?))
    })
}

/// Writes scores in the text format.
///
/// # Safety
/// `s` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gt_scores_save(s: *const GtScores, path: *const c_char) -> GtStatus {
    guard(|| {
        let s = &href(s, "scores")?.0;
        s.save_text(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gt_scores_num_layers(s: *const GtScores) -> usize {
    s.as_ref().map_or(0, |s| s.0.num_layers())
}

/// Copies the keys and scores of one row (layer counted from 0). `len_out`
/// receives the row length even when the buffers are too small.
///
/// # Safety
/// `keys` and `values` must hold `cap` elements; `len_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn gt_scores_row(
    s: *const GtScores,
    layer: usize,
    node: usize,
    keys: *mut usize,
    values: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> GtStatus {
    guard(|| {
        let s = &href(s, "scores")?.0;
        let l = s
            .layers
            .get(layer)
            .ok_or_else(|| Fail(GtStatus::InvalidArgument, format!("no layer {layer}")))?;
        if node >= l.csr.n() {
            return Err(Fail(GtStatus::InvalidArgument, format!("no node {node}")));
        }
        let (k, v, _) = l.row(node);
        write_out(keys, cap, k, len_out)?;
        write_out(values, cap, v, std::ptr::null_mut())
    })
}

/// Mean attention entropy of each layer.
///
/// # Safety
/// `out` must hold `cap` values; `len_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn gt_scores_entropy(
    s: *const GtScores,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> GtStatus {
    guard(|| {
        let s = &href(s, "scores")?.0;
        write_out(out, cap, &gtsparse::analysis::attention_entropy(s), len_out)
    })
}

/// Average share of augmented edges kept with `degs[ℓ]` keys per query.
///
/// # Safety
/// `degs` must hold `num_degs` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_edge_percent(
    s: *const GtScores,
    degs: *const usize,
    num_degs: usize,
    m_aug: usize,
    out: *mut f64,
) -> GtStatus {
    guard(|| {
        let s = &href(s, "scores")?.0;
        let degs = slice_arg(degs, num_degs, "degs")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = gtsparse::pipeline::edge_percent(s, degs, m_aug)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gt_scores_free(s: *mut GtScores) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Annealed temperature at `epoch` (counted from 1).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gt_temperature_at(
    lambda: usize,
    gamma: f64,
    floor: f64,
    epoch: usize,
    out: *mut f64,
) -> GtStatus {
    guard(|| {
        let s = TemperatureSchedule::new(lambda, gamma, floor)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = temperature_at(&s, epoch);
        Ok(())
    })
}

/// Draws `min(k, n)` distinct indices with weighted reservoir sampling;
/// indices come back sorted.
///
/// # Safety
/// `weights` must hold `n` values, `out` `cap` values; `len_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn gt_reservoir_sample(
    weights: *const f64,
    n: usize,
    k: usize,
    seed: u64,
    out: *mut usize,
    cap: usize,
    len_out: *mut usize,
) -> GtStatus {
    guard(|| {
        let w = slice_arg(weights, n, "weights")?;
        let mut r = gtsparse::rng::stream(seed, &[]);
        let s = reservoir_sample(w, k, &mut r)?;
        write_out(out, cap, &s.indices, len_out)
    })
}

/// Trains the wide network on sampled layers with `degs` keys per query and
/// default settings apart from the arguments.
///
/// # Safety
/// Handles must be live, `degs` must hold `num_degs` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_final_train(
    g: *const GtGraph,
    s: *const GtScores,
    degs: *const usize,
    num_degs: usize,
    width: usize,
    epochs: usize,
    seed: u64,
    out: *mut *mut GtModel,
) -> GtStatus {
    guard(|| {
        let (g, s) = (&href(g, "graph")?.0, &href(s, "scores")?.0);
        let degs = slice_arg(degs, num_degs, "degs")?.to_vec();
        let config = TrainConfig {
            width,
            epochs,
            seed,
            ..TrainConfig::final_net(degs)
        };
        let run = train_final(g, s, &config)?;
        put(
            out,
            GtModel {
                params: run.params,
                scores: effective_scores(s, &config)?,
                config,
            },
        )
    })
}

/// Width of a probability row for this model.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gt_model_num_outputs(m: *const GtModel) -> usize {
    m.as_ref().map_or(0, |m| m.params.config.out_dim.max(2))
}

/// Class probabilities for `nodes`, row-major, averaged over `samples`
/// samplings. `out` needs `num_nodes · gt_model_num_outputs` values.
///
/// # Safety
/// Handles must be live; `nodes` must hold `num_nodes` values and `out` `cap`.
#[no_mangle]
pub unsafe extern "C" fn gt_model_predict(
    m: *const GtModel,
    g: *const GtGraph,
    nodes: *const usize,
    num_nodes: usize,
    samples: usize,
    batch_size: usize,
    seed: u64,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> GtStatus {
    guard(|| {
        let (m, g) = (href(m, "model")?, &href(g, "graph")?.0);
        let nodes = slice_arg(nodes, num_nodes, "nodes")?;
        let probs = predict_probs(
            &m.params,
            g,
            &m.scores,
            &m.config.degs,
            nodes,
            samples,
            batch_size,
            &sampler_config(&m.config),
            seed,
        )?;
        write_out(out, cap, probs.data(), len_out)
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gt_model_free(m: *mut GtModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
