use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Csr, Graph, Labels, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Paths making up an on-disk graph. `split` is optional; without it every
/// node is tagged by a fixed 60/20/20 hash split.
#[derive(Clone, Debug)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub split: Option<PathBuf>,
}

impl GraphFiles {
    /// Standard layout of a dataset directory.
    pub fn in_dir(dir: &Path) -> Self {
        let split = dir.join("split.csv");
        GraphFiles {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.csv"),
            split: split.exists().then_some(split),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Data lines with 1-based line numbers, skipping blanks and `#` comments.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (ln, line) in data_lines(&text) {
        let mut it = line.split('\t').map(str::trim);
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(format_err(path, ln, "expected `src<TAB>dst`"));
        };
        let parse = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| format_err(path, ln, format!("bad node id `{s}`")))?;
            if v >= n {
                return Err(format_err(
                    path,
                    ln,
                    format!("node id {v} out of range for n = {n}"),
                ));
            }
            Ok(v)
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

fn parse_features(path: &Path, n: usize) -> Result<Tensor<f64>> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in data_lines(&text) {
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| format_err(path, ln, format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(
                    path,
                    ln,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::Dimension(format!(
            "{}: {} feature rows for {n} nodes",
            path.display(),
            rows.len()
        )));
    }
    Tensor::from_rows(&rows)
}

/// One integer per line gives class ids; several 0/1 columns give a multi-label bitmask.
fn parse_labels(path: &Path, n: usize) -> Result<Labels> {
    let text = read(path)?;
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for (ln, line) in data_lines(&text) {
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| format_err(path, ln, format!("bad label `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(path, ln, "inconsistent label column count"));
            }
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::Dimension(format!(
            "{}: {} label rows for {n} nodes",
            path.display(),
            rows.len()
        )));
    }
    let width = rows.first().map_or(1, Vec::len);
    if width == 1 {
        return Ok(Labels::classes(rows.into_iter().map(|r| r[0]).collect()));
    }
    if width > 64 {
        return Err(format_err(
            path,
            1,
            "at most 64 binary labels are supported",
        ));
    }
    let mut bits = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        let mut b = 0u64;
        for (k, &v) in row.iter().enumerate() {
            match v {
                0 => {}
                1 => b |= 1 << k,
                _ => {
                    return Err(format_err(
                        path,
                        i + 1,
                        "multi-label entries must be 0 or 1",
                    ))
                }
            }
        }
        bits.push(b);
    }
    Ok(Labels::MultiLabel { bits, width })
}

pub fn load_split(path: &Path, n: usize) -> Result<Vec<Split>> {
    let text = read(path)?;
    let mut out = Vec::with_capacity(n);
    for (ln, line) in data_lines(&text) {
        out.push(match line {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(format_err(path, ln, format!("unknown split tag `{other}`"))),
        });
    }
    if out.len() != n {
        return Err(Error::Dimension(format!(
            "{}: {} split rows for {n} nodes",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

fn default_split(n: usize) -> Vec<Split> {
    (0..n)
        .map(
            |i| match (crate::rng::hash_unit(0, &[i as u64]) * 10.0) as u32 {
                0..=5 => Split::Train,
                6 | 7 => Split::Val,
                _ => Split::Test,
            },
        )
        .collect()
}

/// Reads a graph from disk. With `symmetrize`, each listed edge is stored in
/// both directions.
pub fn load_graph(files: &GraphFiles, n: usize, symmetrize: bool) -> Result<Graph> {
    let edges = parse_edges(&files.edges, n)?;
    let adjacency = Csr::from_edges(n, &edges, symmetrize)?;
    let features = parse_features(&files.features, n)?;
    let labels = parse_labels(&files.labels, n)?;
    let split = match &files.split {
        Some(p) => load_split(p, n)?,
        None => default_split(n),
    };
    Graph::new(adjacency, features, labels, split)
}

/// Writes `edges.tsv`, `features.csv`, `labels.csv` and `split.csv` into `dir`.
/// Symmetric graphs list each undirected edge once.
/// Loads a dataset directory, taking the node count from `features.csv`.
pub fn load_graph_dir(dir: &Path, symmetrize: bool) -> Result<Graph> {
    let files = GraphFiles::in_dir(dir);
    let n = data_lines(&read(&files.features)?).count();
    load_graph(&files, n, symmetrize)
}

pub fn write_graph_dir(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sym = g.adjacency.is_symmetric();
    let mut edges = String::new();
    for (i, j) in g.adjacency.edges() {
        if !sym || i <= j {
            edges.push_str(&format!("{i}\t{j}\n"));
        }
    }
    let mut feats = String::new();
    for i in 0..g.n() {
        let row: Vec<String> = g.features.row(i).iter().map(|v| format!("{v}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    let mut labels = String::new();
    match &g.labels {
        Labels::Classes { ids, .. } => ids.iter().for_each(|l| labels.push_str(&format!("{l}\n"))),
        Labels::MultiLabel { bits, width } => {
            for b in bits {
                let row: Vec<String> = (0..*width).map(|k| ((b >> k) & 1).to_string()).collect();
                labels.push_str(&row.join(","));
                labels.push('\n');
            }
        }
    }
    let split: String = g
        .split
        .iter()
        .map(|s| match s {
            Split::Train => "train\n",
            Split::Val => "val\n",
            Split::Test => "test\n",
        })
        .collect();
    for (name, body) in [
        ("edges.tsv", edges),
        ("features.csv", feats),
        ("labels.csv", labels),
        ("split.csv", split),
    ] {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
