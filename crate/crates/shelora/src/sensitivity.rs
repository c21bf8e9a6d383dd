//! Column sensitivity scoring and budgeted subset selection.
//!
//! A weight entry's sensitivity is its magnitude times the l2 norm of
//! the matching activation column, and a channel (column) aggregates
//! the entries above it. Clients use the channel scores to decide
//! which adapter columns are worth the encryption budget.

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("budget fraction {0} outside [0, 1]")]
    BadGamma(f64),
    #[error("non-finite score at column {0}")]
    NonFinite(usize),
}

/// Per-column importance scores for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScores {
    scores: Vec<f64>,
}

impl ChannelScores {
    /// Wraps raw scores, rejecting negative or non-finite values.
    pub fn new(scores: Vec<f64>) -> Result<Self, SensitivityError> {
        for (j, s) in scores.iter().enumerate() {
            if !s.is_finite() || *s < 0.0 {
                return Err(SensitivityError::NonFinite(j));
            }
        }
        Ok(ChannelScores { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// The columns a budget `gamma` buys, most important first.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSelection {
    /// Selected column indices ordered by descending score; ties are
    /// broken toward the lower index.
    pub columns: Vec<usize>,
    /// `floor(n * gamma)`.
    pub k: usize,
    pub gamma: f64,
}

/// Element-wise sensitivity: `|w[i][j]|` times the l2 norm of column
/// `j` of the activation batch `x` (one sample per row).
pub fn wanda_scores(w: &Matrix, x: &Matrix) -> Result<Matrix, SensitivityError> {
    if w.cols() != x.cols() {
        return Err(SensitivityError::Shape(format!(
            "weights have {} columns but activations have {}",
            w.cols(),
            x.cols()
        )));
    }
    let norms: Vec<f64> = (0..x.cols())
        .map(|j| (0..x.rows()).map(|l| x.get(l, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut out = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            out.set(i, j, w.get(i, j).abs() * norms[j]);
        }
    }
    Ok(out)
}

/// Channel importance: column sums of the element-wise scores.
pub fn channel_importance(w: &Matrix, x: &Matrix) -> Result<ChannelScores, SensitivityError> {
    let elementwise = wanda_scores(w, x)?;
    let scores: Vec<f64> = (0..elementwise.cols())
        .map(|j| (0..elementwise.rows()).map(|i| elementwise.get(i, j)).sum())
        .collect();
    ChannelScores::new(scores)
}

/// Picks the `floor(n * gamma)` highest-scoring columns.
///
/// The product `n * gamma` is nudged by `1e-9` before flooring so that
/// budgets written as fractions (for example `2/3` of 3 columns) don't
/// lose a column to floating-point rounding.
pub fn select_subset(scores: &ChannelScores, gamma: f64) -> Result<SubsetSelection, SensitivityError> {
    if !(0.0..=1.0).contains(&gamma) || gamma.is_nan() {
        return Err(SensitivityError::BadGamma(gamma));
    }
    let n = scores.len();
    let k = ((n as f64) * gamma + 1e-9).floor() as usize;
    let k = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .partial_cmp(&scores.scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(SubsetSelection {
        columns: order,
        k,
        gamma,
    })
}
