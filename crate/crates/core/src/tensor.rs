//! Minimal dense linear algebra for two-layer sigmoid networks.
//!
//! Everything is `f64`, row-major, and panic-free: shape errors surface as
//! [`Error::DimMismatch`]. All functions here are pure; nothing holds
//! shared mutable state, so they can be called freely from multiple
//! threads.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from a row-major buffer. Rejects length mismatches
    /// and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "Matrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Matrix::from_vec"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimMismatch {
                    op: "Matrix::from_rows",
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · x`.
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if self.cols != x.dim() {
            return Err(Error::DimMismatch {
                op: "matvec",
                expected: self.cols,
                got: x.dim(),
            });
        }
        let out = (0..self.rows)
            .map(|i| dot(self.row(i), x.as_slice()))
            .collect();
        Ok(Vector::from_raw(out))
    }

    /// `selfᵀ · x`. Walks rows so the row-major layout stays cache-friendly.
    pub fn matvec_transposed(&self, x: &Vector) -> Result<Vector> {
        if self.rows != x.dim() {
            return Err(Error::DimMismatch {
                op: "matvec_transposed",
                expected: self.rows,
                got: x.dim(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.as_slice().iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
        Ok(Vector::from_raw(out))
    }

    /// `self += c · a bᵀ`. Used to accumulate weight gradients.
    pub fn add_scaled_outer(&mut self, a: &[f64], b: &[f64], c: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let scale = c * ai;
            if scale == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (w, &bj) in row.iter_mut().zip(b) {
                *w += scale * bj;
            }
        }
    }

    /// `self += c · other`, elementwise.
    pub fn add_scaled(&mut self, other: &Matrix, c: f64) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (w, &g) in self.data.iter_mut().zip(&other.data) {
            *w += c * g;
        }
    }
}

/// Dense vector of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector {
            data: vec![0.0; dim],
        }
    }

    /// Validating constructor: rejects non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Vector::new"));
        }
        Ok(Vector { data })
    }

    /// Unvalidated constructor for internal arithmetic whose inputs are
    /// already finite.
    pub fn from_raw(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn add_scaled(&mut self, other: &Vector, c: f64) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean distance between two equal-length slices.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Numerically stable logistic function: never overflows, never NaN for
/// finite input, saturates to 0/1 in the tails.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Vector) -> Vector {
    Vector::from_raw(x.as_slice().iter().map(|&v| sigmoid_scalar(v)).collect())
}

/// Derivative of the logistic function expressed in terms of its output:
/// `σ'(z) = σ(z)(1 − σ(z))`.
pub fn sigmoid_grad_from_output(h: f64) -> f64 {
    h * (1.0 - h)
}

pub fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn relu(x: &Vector) -> Vector {
    Vector::from_raw(x.as_slice().iter().map(|&v| relu_scalar(v)).collect())
}

/// Subgradient of `max(0, x)`. At the kink (`x == 0`) this is defined as 0
/// so that gradients are deterministic.
pub fn hinge_subgrad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Softmax with max-subtraction. The selection scores it normalizes are
/// negated squared distances, which can be large in magnitude, so the shift
/// is required rather than cosmetic.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("softmax"));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}
