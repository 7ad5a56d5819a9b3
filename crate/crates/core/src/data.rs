//! Training data container shared by every estimator.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("need at least 2 observations, got {0}")]
    TooFewRows(usize),
    #[error("need at least 1 predictor column")]
    NoPredictors,
    #[error("predictor matrix has {x_rows} rows but response has {y_len} entries")]
    LengthMismatch { x_rows: usize, y_len: usize },
    #[error("row {row} has {got} predictors, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
}

/// Predictor matrix (row-major, `n x p`) paired with a response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    p: usize,
}

impl TrainingSet {
    /// Builds a training set from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self, DataError> {
        let p = rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(rows.len() * p);
        for (row, values) in rows.iter().enumerate() {
            if values.len() != p {
                return Err(DataError::RaggedRow {
                    row,
                    got: values.len(),
                    expected: p,
                });
            }
            x.extend_from_slice(values);
        }
        Self::from_flat(x, p, y)
    }

    /// Builds a training set from a row-major buffer with `p` columns.
    pub fn from_flat(x: Vec<f64>, p: usize, y: Vec<f64>) -> Result<Self, DataError> {
        if p == 0 {
            return Err(DataError::NoPredictors);
        }
        let n = x.len() / p;
        if x.len() % p != 0 || n != y.len() {
            return Err(DataError::LengthMismatch {
                x_rows: n,
                y_len: y.len(),
            });
        }
        if n < 2 {
            return Err(DataError::TooFewRows(n));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: pos / p,
                column: pos % p,
            });
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row, column: p });
        }
        Ok(Self { x, y, n, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    /// Copies the given rows (in order) into a new training set.
    pub fn subset(&self, rows: &[usize]) -> Result<Self, DataError> {
        let mut x = Vec::with_capacity(rows.len() * self.p);
        let mut y = Vec::with_capacity(rows.len());
        for &i in rows {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Self::from_flat(x, self.p, y)
    }
}
