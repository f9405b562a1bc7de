use crate::attention::Targets;
use crate::error::{Error, Result};
use crate::graph::Labels;
use crate::numerics::Tensor;

/// Prediction problem implied by the labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Softmax over this many classes.
    Multiclass(usize),
    /// One sigmoid output for two classes.
    Binary,
    /// Independent sigmoids over this many labels.
    MultiLabel(usize),
}

impl Task {
    pub fn of(labels: &Labels) -> Self {
        match labels {
            Labels::Classes { num_classes, .. } if *num_classes <= 2 => Task::Binary,
            Labels::Classes { num_classes, .. } => Task::Multiclass(*num_classes),
            Labels::MultiLabel { width, .. } => Task::MultiLabel(*width),
        }
    }

    pub fn out_dim(self) -> usize {
        match self {
            Task::Multiclass(c) | Task::MultiLabel(c) => c,
            Task::Binary => 1,
        }
    }

    /// Number of probability columns reported per node.
    pub fn num_outputs(self) -> usize {
        match self {
            Task::Binary => 2,
            other => other.out_dim(),
        }
    }

    pub fn targets(self, labels: &Labels, nodes: &[usize]) -> Result<Targets> {
        match (self, labels) {
            (Task::Multiclass(_), Labels::Classes { ids, .. }) => {
                Ok(Targets::Classes(nodes.iter().map(|&v| ids[v]).collect()))
            }
            (Task::Binary, Labels::Classes { ids, .. }) => Ok(Targets::Binary(
                nodes.iter().map(|&v| (ids[v] == 1) as u8 as f64).collect(),
            )),
            (Task::MultiLabel(w), Labels::MultiLabel { bits, .. }) => Ok(Targets::Binary(
                nodes
                    .iter()
                    .flat_map(|&v| (0..w).map(move |k| ((bits[v] >> k) & 1) as f64))
                    .collect(),
            )),
            _ => Err(Error::Config("labels do not match the task".into())),
        }
    }

    /// Turns raw logits (one row per node) into per-class probabilities.
    pub fn probabilities(self, logits: &Tensor<f64>) -> Tensor<f64> {
        let rows = logits.rows();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let data: Vec<f64> = match self {
            Task::Binary => (0..rows)
                .flat_map(|r| {
                    let p = sig(logits.at(r, 0));
                    [1.0 - p, p]
                })
                .collect(),
            Task::MultiLabel(_) => logits.data().iter().map(|&x| sig(x)).collect(),
            Task::Multiclass(c) => (0..rows)
                .flat_map(|r| {
                    let row = logits.row(r);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                    (0..c).map(move |k| (row[k] - m).exp() / z)
                })
                .collect(),
        };
        Tensor::new(&[rows, self.num_outputs()], data).expect("probability shape")
    }

    /// Accuracy for class tasks, mean per-label ROC-AUC for multi-label.
    pub fn metric(self, probs: &Tensor<f64>, labels: &Labels, nodes: &[usize]) -> f64 {
        match (self, labels) {
            (Task::MultiLabel(w), Labels::MultiLabel { bits, .. }) => {
                let aucs: Vec<f64> = (0..w)
                    .filter_map(|k| {
                        let y: Vec<bool> = nodes.iter().map(|&v| (bits[v] >> k) & 1 == 1).collect();
                        let s: Vec<f64> = (0..nodes.len()).map(|r| probs.at(r, k)).collect();
                        roc_auc(&s, &y)
                    })
                    .collect();
                if aucs.is_empty() {
                    f64::NAN
                } else {
                    aucs.iter().sum::<f64>() / aucs.len() as f64
                }
            }
            (_, Labels::Classes { ids, .. }) => {
                if nodes.is_empty() {
                    return f64::NAN;
                }
                let hits = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(r, &v)| {
                        let row = probs.row(r);
                        // first maximum wins
                        let arg =
                            (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                        arg == ids[v]
                    })
                    .count();
                hits as f64 / nodes.len() as f64
            }
            _ => f64::NAN,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Task::MultiLabel(_) => "roc_auc",
            _ => "accuracy",
        }
    }
}

/// Area under the ROC curve by rank statistics; `None` if one class is absent.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    let np = positive.iter().filter(|&&p| p).count() as f64;
    let nn = positive.len() as f64 - np;
    if np == 0.0 || nn == 0.0 {
        return None;
    }
    let sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|p| *p.1)
        .map(|p| p.0)
        .sum();
    Some((sum - np * (np + 1.0) / 2.0) / (np * nn))
}
