//! Row-major filter matrices: one row per output channel, flattened over
//! `(in_channel, ky, kx)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("ShapeMismatch: {rows}x{cols} matrix needs {expected} values, got {actual}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("EmptyMatrix: a filter matrix needs at least one row and one column")]
    Empty,
    #[error("NonFiniteValue: flat index {index} is {value}")]
    NonFinite { index: usize, value: f64 },
}

/// The filters of one layer as points in `R^d`, `d = in_channels * k * k`.
///
/// Values are held in `f64` so that criterion arithmetic never accumulates in
/// single precision; bundles narrow to `f32` on save.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FilterMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, MatrixError> {
        if rows == 0 || cols == 0 {
            return Err(MatrixError::Empty);
        }
        if values.len() != rows * cols {
            return Err(MatrixError::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MatrixError::NonFinite { index, value });
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds from explicit rows; all rows must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, MatrixError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(MatrixError::ShapeMismatch {
                    rows: rows.len(),
                    cols,
                    expected: rows.len() * cols,
                    actual: values.len() + r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, MatrixError> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values. Callers must keep them finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.cols..(j + 1) * self.cols]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.cols..(j + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    /// Sets row `j` to exact zeros.
    pub fn zero_row(&mut self, j: usize) {
        self.row_mut(j).fill(0.0);
    }

    pub fn is_zero_row(&self, j: usize) -> bool {
        self.row(j).iter().all(|&v| v == 0.0)
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, MatrixError> {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &j in rows {
            values.extend_from_slice(self.row(j));
        }
        Self::new(rows.len(), self.cols, values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
