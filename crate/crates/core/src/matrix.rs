use serde::{Deserialize, Serialize};

use crate::math::MathError;
use crate::parallel::{map_indices, Execution};

/// Products below this many multiply-adds always run sequentially.
const PARALLEL_WORK_THRESHOLD: usize = 1 << 16;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    /// Builds a matrix, checking the buffer length and that every entry is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MathError> {
        if data.len() != rows * cols {
            return Err(MathError::ShapeMismatch {
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MathError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MathError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(MathError::ShapeMismatch {
                    expected: (rows.len(), cols),
                    found: (i, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub(crate) fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; a 0-column matrix has no meaningful rows
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Copies the listed rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self += factor * other`, elementwise.
    pub fn add_scaled(&mut self, other: &RealMatrix, factor: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    /// Elementwise sum of `self ⊙ other`.
    pub fn frobenius_dot(&self, other: &RealMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "frobenius_dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &RealMatrix) -> Result<Self, MathError> {
        self.matmul_with(other, Execution::default())
    }

    pub fn matmul_with(&self, other: &RealMatrix, exec: Execution) -> Result<Self, MathError> {
        if self.cols != other.rows {
            return Err(MathError::DimensionMismatch {
                left: self.cols,
                right: other.rows,
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let rows = map_indices(pick(exec, n * k * m), n, |i| {
            let a = self.row(i);
            let mut out = vec![0.0; m];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in out.iter_mut().zip(other.row(p)) {
                    *o += av * bv;
                }
            }
            out
        });
        Ok(Self {
            rows: n,
            cols: m,
            data: rows.concat(),
        })
    }

    /// `self · otherᵀ`; rows of both operands are dotted pairwise.
    pub fn matmul_transposed(&self, other: &RealMatrix) -> Result<Self, MathError> {
        self.matmul_transposed_with(other, Execution::default())
    }

    pub fn matmul_transposed_with(
        &self,
        other: &RealMatrix,
        exec: Execution,
    ) -> Result<Self, MathError> {
        if self.cols != other.cols {
            return Err(MathError::DimensionMismatch {
                left: self.cols,
                right: other.cols,
            });
        }
        let (n, m) = (self.rows, other.rows);
        let rows = map_indices(pick(exec, n * m * self.cols), n, |i| {
            let a = self.row(i);
            (0..m).map(|j| dot(a, other.row(j))).collect::<Vec<_>>()
        });
        Ok(Self {
            rows: n,
            cols: m,
            data: rows.concat(),
        })
    }

    /// `selfᵀ · other`.
    pub fn transpose_matmul(&self, other: &RealMatrix) -> Result<Self, MathError> {
        if self.rows != other.rows {
            return Err(MathError::DimensionMismatch {
                left: self.rows,
                right: other.rows,
            });
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let rows = map_indices(pick(Execution::default(), n * k * m), n, |r| {
            let mut out = vec![0.0; m];
            for p in 0..k {
                let av = self.get(p, r);
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in out.iter_mut().zip(other.row(p)) {
                    *o += av * bv;
                }
            }
            out
        });
        Ok(Self {
            rows: n,
            cols: m,
            data: rows.concat(),
        })
    }
}

fn pick(exec: Execution, work: usize) -> Execution {
    if work < PARALLEL_WORK_THRESHOLD {
        Execution::Sequential
    } else {
        exec
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
