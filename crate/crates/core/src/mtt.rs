//! Globally normalized arc objective.
//!
//! Arc scores are first log-softmax normalized over candidate heads for each
//! dependent. The log-partition over all non-projective trees is the
//! log-determinant of a Laplacian minor built from the exponentiated scores
//! (Kirchhoff's Matrix-Tree Theorem); for the single-root variant the first
//! row of the minor is replaced by the root weights. Arc marginals are the
//! gradient of the log-partition and come from the inverse of the same
//! matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::scorer::{LabelScores, ScoreMatrix};
use crate::treebank::{validate_heads, Sentence};

/// Log arc weights, same layout as [`ScoreMatrix`]. Self-arcs are `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedScores(Array2<f64>);

impl NormalizedScores {
    /// Wraps arbitrary log weights without normalizing them. The
    /// partition-function routines accept any finite log weights.
    pub fn from_log_weights(weights: Array2<f64>) -> Result<Self> {
        Ok(NormalizedScores(ScoreMatrix::new(weights)?.0))
    }

    pub fn n(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, head: usize, dependent: usize) -> f64 {
        self.0[[head, dependent - 1]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Sum of log weights of the arcs of `heads`.
    pub fn tree_score(&self, heads: &[usize]) -> f64 {
        heads.iter().enumerate().map(|(i, &h)| self.0[[h, i]]).sum()
    }
}

/// Column-wise log-softmax over candidate heads.
pub fn local_normalize(scores: &ScoreMatrix) -> Result<NormalizedScores> {
    let mut out = scores.0.clone();
    for (c, mut column) in out.columns_mut().into_iter().enumerate() {
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::EmptyColumn(c + 1));
        }
        let sum: f64 = column.iter().map(|&v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        column.mapv_inplace(|v| v - log_norm);
    }
    Ok(NormalizedScores(out))
}

/// Laplacian minor of column-shifted weights, plus the total shift.
struct Laplacian {
    weights: Array2<f64>,
    matrix: Array2<f64>,
    shift: f64,
}

fn laplacian(scores: &NormalizedScores, single_root: bool) -> Result<Laplacian> {
    let n = scores.n();
    let mut weights = Array2::zeros((n + 1, n));
    let mut shift = 0.0;
    for c in 0..n {
        let column = scores.0.column(c);
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::EmptyColumn(c + 1));
        }
        shift += max;
        for h in 0..=n {
            weights[[h, c]] = (column[h] - max).exp();
        }
    }

    let mut matrix = Array2::zeros((n, n));
    for c in 1..=n {
        for h in 1..=n {
            if h != c {
                let w = weights[[h, c - 1]];
                matrix[[c - 1, c - 1]] += w;
                matrix[[h - 1, c - 1]] -= w;
            }
        }
        if single_root {
            matrix[[0, c - 1]] = weights[[0, c - 1]];
        } else {
            matrix[[c - 1, c - 1]] += weights[[0, c - 1]];
        }
    }
    Ok(Laplacian { weights, matrix, shift })
}

fn factor(lap: &Laplacian) -> Result<(Lu, f64)> {
    let lu = Lu::factor(lap.matrix.view())?;
    let (sign, log_abs) = lu.log_det();
    if sign <= 0.0 || !log_abs.is_finite() {
        return Err(Error::Degenerate(format!(
            "Laplacian determinant has sign {} and log-magnitude {}",
            sign, log_abs
        )));
    }
    Ok((lu, log_abs))
}

/// `log Z`: log of the summed exponentiated weight of all trees.
pub fn log_partition(scores: &NormalizedScores, single_root: bool) -> Result<f64> {
    let lap = laplacian(scores, single_root)?;
    let (_, log_abs) = factor(&lap)?;
    Ok(lap.shift + log_abs)
}

/// Log-probability of one tree under the tree distribution.
pub fn tree_log_prob(scores: &NormalizedScores, heads: &[usize], single_root: bool) -> Result<f64> {
    if heads.len() != scores.n() {
        return Err(Error::Dimension(format!("{} heads for {} words", heads.len(), scores.n())));
    }
    validate_heads(heads, single_root).map_err(|v| Error::InvalidTree {
        sent_id: String::new(),
        violations: v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
    })?;
    Ok(scores.tree_score(heads) - log_partition(scores, single_root)?)
}

/// Arc marginals `P((h, c) in y)`, same layout as the scores.
pub fn arc_marginals(scores: &NormalizedScores, single_root: bool) -> Result<Array2<f64>> {
    let lap = laplacian(scores, single_root)?;
    let (lu, _) = factor(&lap)?;
    let inv = lu.inverse();
    let n = scores.n();
    let a = &lap.weights;

    let mut marginals = Array2::zeros((n + 1, n));
    for c in 1..=n {
        let i = c - 1;
        marginals[[0, i]] = if single_root {
            a[[0, i]] * inv[[i, 0]]
        } else {
            a[[0, i]] * inv[[i, i]]
        };
        for h in 1..=n {
            if h == c {
                continue;
            }
            let j = h - 1;
            let grad = if single_root {
                let diag = if c != 1 { inv[[i, i]] } else { 0.0 };
                let off = if h != 1 { inv[[i, j]] } else { 0.0 };
                diag - off
            } else {
                inv[[i, i]] - inv[[i, j]]
            };
            marginals[[h, i]] = a[[h, i]] * grad;
        }
    }
    Ok(marginals)
}

/// Negative tree log-likelihood of the gold heads and its gradient with
/// respect to the raw (unnormalized) arc scores.
pub fn arc_nll_and_grad(scores: &ScoreMatrix, heads: &[usize], single_root: bool) -> Result<(f64, Array2<f64>)> {
    let normalized = local_normalize(scores)?;
    let log_prob = tree_log_prob(&normalized, heads, single_root)?;
    let marginals = arc_marginals(&normalized, single_root)?;

    let mut d_logp = marginals;
    for (i, &h) in heads.iter().enumerate() {
        d_logp[[h, i]] -= 1.0;
    }
    let n = scores.n();
    let mut d_scores = Array2::zeros((n + 1, n));
    for c in 0..n {
        let column_total: f64 = d_logp.column(c).sum();
        for h in 0..=n {
            let logp = normalized.0[[h, c]];
            if logp.is_finite() {
                d_scores[[h, c]] = d_logp[[h, c]] - logp.exp() * column_total;
            }
        }
    }
    Ok((-log_prob, d_scores))
}

/// Cross-entropy of the gold label and its gradient with respect to the
/// label scores.
pub fn label_nll_and_grad(scores: ArrayView1<f64>, gold: usize) -> (f64, Array1<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|&v| (v - max).exp()).sum();
    let log_norm = max + sum.ln();
    let mut grad = scores.mapv(|v| (v - log_norm).exp());
    grad[gold] -= 1.0;
    (log_norm - scores[gold], grad)
}

pub fn label_index(labels: &[String], label: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))
}

/// Per-token training loss of one gold sentence: tree negative
/// log-likelihood plus label cross-entropy at the gold heads, divided by
/// the number of words.
pub fn loss(
    scores: &ScoreMatrix,
    label_scores: &LabelScores,
    labels: &[String],
    gold: &Sentence,
    single_root: bool,
) -> Result<f64> {
    let heads = gold.heads();
    if heads.len() != scores.n() || label_scores.n() != scores.n() || label_scores.labels() != labels.len() {
        return Err(Error::Dimension("scores do not match the gold sentence".into()));
    }
    let (arc_nll, _) = arc_nll_and_grad(scores, &heads, single_root)?;
    let mut label_nll = 0.0;
    for (i, token) in gold.tokens.iter().enumerate() {
        let gold_label = label_index(labels, &token.deprel)?;
        label_nll += label_nll_and_grad(label_scores.get(token.head, i + 1), gold_label).0;
    }
    Ok((arc_nll + label_nll) / heads.len() as f64)
}
