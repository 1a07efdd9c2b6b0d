//! Normalization, cosine similarity, temperature softmax, KL divergence and
//! diagonal cross-entropy over dense `f64` matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{dot, RealMatrix};

/// Rows with a Euclidean norm below this are treated as zero.
pub const MIN_ROW_NORM: f64 = 1e-12;
/// Tolerance on unit row norms and on row sums of distributions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("row {0} has (near) zero norm")]
    ZeroRow(usize),
    #[error("inner dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("inverse temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("embedding rows are not unit-normalized (row {row} has norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("matrix must have at least one row")]
    Empty,
}

/// Matrix whose rows are embeddings, optionally known to be unit-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    inner: RealMatrix,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Wraps rows without asserting anything about their norms.
    pub fn unnormalized(inner: RealMatrix) -> Result<Self, MathError> {
        if inner.rows() == 0 {
            return Err(MathError::Empty);
        }
        Ok(Self {
            inner,
            normalized: false,
        })
    }

    /// Wraps rows that are already unit-norm, verifying each within [`UNIT_TOLERANCE`].
    pub fn from_unit_rows(inner: RealMatrix) -> Result<Self, MathError> {
        if inner.rows() == 0 {
            return Err(MathError::Empty);
        }
        for (i, r) in inner.row_iter().enumerate() {
            let norm = dot(r, r).sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(MathError::NotNormalized { row: i, norm });
            }
        }
        Ok(Self {
            inner,
            normalized: true,
        })
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.inner
    }

    pub fn into_matrix(self) -> RealMatrix {
        self.inner
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn rows(&self) -> usize {
        self.inner.rows()
    }

    pub fn dim(&self) -> usize {
        self.inner.cols()
    }

    /// Gathers rows; the normalization flag carries over.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            inner: self.inner.select_rows(indices),
            normalized: self.normalized,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    I2T,
    T2I,
    I2I,
    T2T,
}

/// Pairwise similarities between two embedding sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    inner: RealMatrix,
    kind: SimilarityKind,
}

impl SimilarityMatrix {
    /// Wraps an arbitrary logit matrix (used for perturbation checks and tests).
    pub fn new(inner: RealMatrix, kind: SimilarityKind) -> Self {
        Self { inner, kind }
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.inner
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    /// Swaps query and gallery roles; `i2t` becomes `t2i` and vice versa.
    pub fn transpose(&self) -> Self {
        let kind = match self.kind {
            SimilarityKind::I2T => SimilarityKind::T2I,
            SimilarityKind::T2I => SimilarityKind::I2T,
            k => k,
        };
        Self {
            inner: self.inner.transpose(),
            kind,
        }
    }
}

/// Matrix whose rows are probability distributions.
///
/// When produced by [`row_softmax`] the row-wise log-probabilities from the
/// log-softmax path are kept alongside, and KL/cross-entropy use them.
#[derive(Clone, Debug, PartialEq)]
pub struct RowStochasticMatrix {
    probs: RealMatrix,
    log_probs: Option<RealMatrix>,
}

impl RowStochasticMatrix {
    /// Validates a user-supplied distribution matrix: square, entries in
    /// `[0, 1]`, rows summing to one within [`UNIT_TOLERANCE`].
    pub fn new(probs: RealMatrix) -> Result<Self, MathError> {
        if probs.rows() != probs.cols() {
            return Err(MathError::ShapeMismatch {
                expected: (probs.rows(), probs.rows()),
                found: probs.shape(),
            });
        }
        for (i, r) in probs.row_iter().enumerate() {
            if let Some(j) = r.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(MathError::InvalidDistribution(format!(
                    "entry ({i}, {j}) = {} outside [0, 1]",
                    r[j]
                )));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > UNIT_TOLERANCE {
                return Err(MathError::InvalidDistribution(format!(
                    "row {i} sums to {s}"
                )));
            }
        }
        Ok(Self {
            probs,
            log_probs: None,
        })
    }

    pub fn probs(&self) -> &RealMatrix {
        &self.probs
    }

    pub fn log_probs(&self) -> Option<&RealMatrix> {
        self.log_probs.as_ref()
    }

    pub fn size(&self) -> usize {
        self.probs.rows()
    }

    #[inline]
    fn log_at(&self, i: usize, j: usize) -> f64 {
        match &self.log_probs {
            Some(l) => l.get(i, j),
            None => self.probs.get(i, j).ln(),
        }
    }
}

/// Divides each row by its Euclidean norm.
pub fn l2_normalize_rows(m: &RealMatrix) -> Result<EmbeddingMatrix, MathError> {
    l2_normalize_rows_with_norms(m).map(|(e, _)| e)
}

/// Like [`l2_normalize_rows`], also returning the pre-normalization row norms.
pub fn l2_normalize_rows_with_norms(
    m: &RealMatrix,
) -> Result<(EmbeddingMatrix, Vec<f64>), MathError> {
    if m.rows() == 0 {
        return Err(MathError::Empty);
    }
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let norm = dot(row, row).sqrt();
        if norm.is_nan() || norm < MIN_ROW_NORM {
            return Err(MathError::ZeroRow(i));
        }
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((
        EmbeddingMatrix {
            inner: out,
            normalized: true,
        },
        norms,
    ))
}

/// Cosine similarity between every row of `a` and every row of `b`.
///
/// Both inputs must carry the normalized flag.
pub fn cosine_similarity(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    kind: SimilarityKind,
) -> Result<SimilarityMatrix, MathError> {
    for e in [a, b] {
        if !e.normalized {
            let r = e.inner.row(0);
            return Err(MathError::NotNormalized {
                row: 0,
                norm: dot(r, r).sqrt(),
            });
        }
    }
    let inner = a.inner.matmul_transposed(&b.inner)?;
    Ok(SimilarityMatrix { inner, kind })
}

/// Row-wise softmax of `s · inv_temp`, stabilized by subtracting the row maximum.
pub fn row_softmax(s: &SimilarityMatrix, inv_temp: f64) -> Result<RowStochasticMatrix, MathError> {
    softmax_rows(s.matrix(), inv_temp)
}

pub(crate) fn softmax_rows(
    m: &RealMatrix,
    inv_temp: f64,
) -> Result<RowStochasticMatrix, MathError> {
    if !(inv_temp > 0.0 && inv_temp.is_finite()) {
        return Err(MathError::NonPositiveTemperature(inv_temp));
    }
    let (n, k) = m.shape();
    if n != k {
        return Err(MathError::ShapeMismatch {
            expected: (n, n),
            found: (n, k),
        });
    }
    let mut probs = RealMatrix::zeros(n, k);
    let mut logs = RealMatrix::zeros(n, k);
    for i in 0..n {
        let row = m.row(i);
        let max = row
            .iter()
            .map(|v| v * inv_temp)
            .fold(f64::NEG_INFINITY, f64::max);
        let p = probs.row_mut(i);
        let mut sum = 0.0;
        for (pv, &sv) in p.iter_mut().zip(row) {
            *pv = (sv * inv_temp - max).exp();
            sum += *pv;
        }
        p.iter_mut().for_each(|v| *v /= sum);
        let lse = sum.ln();
        for (lv, &sv) in logs.row_mut(i).iter_mut().zip(row) {
            *lv = sv * inv_temp - max - lse;
        }
    }
    Ok(RowStochasticMatrix {
        probs,
        log_probs: Some(logs),
    })
}

/// Per-row `KL(p_i ‖ q_i)` and its mean over rows, with `0 · log 0 = 0`.
pub fn kl_divergence_rows(
    p: &RowStochasticMatrix,
    q: &RowStochasticMatrix,
) -> Result<(Vec<f64>, f64), MathError> {
    if p.probs.shape() != q.probs.shape() {
        return Err(MathError::ShapeMismatch {
            expected: p.probs.shape(),
            found: q.probs.shape(),
        });
    }
    if q.log_probs.is_none() {
        if let Some(pos) = q.probs.data().iter().position(|&v| v <= 0.0) {
            let n = q.size();
            return Err(MathError::InvalidDistribution(format!(
                "q entry ({}, {}) is not positive",
                pos / n,
                pos % n
            )));
        }
    }
    let n = p.size();
    let per_row: Vec<f64> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                let pv = p.probs.get(i, j);
                if pv > 0.0 {
                    acc += pv * (p.log_at(i, j) - q.log_at(i, j));
                }
            }
            acc
        })
        .collect();
    let mean = per_row.iter().sum::<f64>() / n as f64;
    Ok((per_row, mean))
}

/// `−(1/N) Σ_i log q_ii`: cross-entropy against one-hot targets on the diagonal.
pub fn cross_entropy_diagonal(q: &RowStochasticMatrix) -> Result<f64, MathError> {
    let n = q.size();
    let mut acc = 0.0;
    for i in 0..n {
        if q.log_probs.is_none() && q.probs.get(i, i) <= 0.0 {
            return Err(MathError::InvalidDistribution(format!(
                "diagonal entry {i} is not positive"
            )));
        }
        acc -= q.log_at(i, i);
    }
    Ok(acc / n as f64)
}

/// Correctly rounded sum of `values` (Shewchuk's exact partials).
///
/// Used where summed decimal scores must come out exactly, e.g. recall sums.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // Round the partials to nearest, with half-way correction.
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}
