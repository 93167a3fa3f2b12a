//! Plain row-major matrices and the dense least-squares solver used by the
//! regression baseline.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(shape_err(
                "matrix",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("matrix", "ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns selected by `indices`, in that order.
    pub fn select_columns(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(indices.iter().map(|&j| row[j]));
        }
        Matrix {
            rows: self.rows,
            cols: indices.len(),
            data,
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = vec![0.0; self.rows * other.cols];
        crate::autodiff::gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            (self.cols, 1),
            &other.data,
            (other.cols, 1),
            &mut out,
        );
        Ok(Matrix {
            rows: self.rows,
            cols: other.cols,
            data: out,
        })
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Solves `min ||a x - b||^2 + ridge ||x||^2` for every column of `b`.
///
/// Columns of `a` are scaled to unit norm before a Householder QR of the
/// (ridge-augmented) system. With `ridge == 0` a rank-deficient `a` is
/// reported as a numerical error rather than silently regularized.
pub fn ridge_least_squares(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    let (m, l) = a.shape();
    if b.rows() != m {
        return Err(shape_err(
            "least_squares",
            format!("design {:?} vs targets {:?}", a.shape(), b.shape()),
        ));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
    }
    let k = b.cols();
    if l == 0 {
        return Ok(Matrix::zeros(0, k));
    }
    let scales: Vec<f64> = (0..l)
        .map(|j| {
            let n = (0..m).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();

    let rows = if ridge > 0.0 { m + l } else { m };
    if rows < l {
        return Err(Error::Numerical(format!(
            "underdetermined system: {m} rows for {l} unknowns without ridge"
        )));
    }
    // Column-major working copies.
    let mut q: Vec<Vec<f64>> = (0..l)
        .map(|j| {
            let mut col: Vec<f64> = (0..m).map(|i| a.get(i, j) / scales[j]).collect();
            if ridge > 0.0 {
                // Ridge acts on the original coefficients: sqrt(ridge)/scale.
                col.extend((0..l).map(|r| if r == j { ridge.sqrt() / scales[j] } else { 0.0 }));
            }
            col
        })
        .collect();
    let mut rhs: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut col: Vec<f64> = (0..m).map(|i| b.get(i, c)).collect();
            col.resize(rows, 0.0);
            col
        })
        .collect();

    let mut diag = vec![0.0; l];
    for j in 0..l {
        let norm = q[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[j] = 0.0;
            continue;
        }
        let alpha = if q[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = q[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[j] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let apply = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        };
        for col in q.iter_mut().skip(j + 1) {
            apply(&mut col[j..]);
        }
        for col in rhs.iter_mut() {
            apply(&mut col[j..]);
        }
    }

    let max_diag = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let tol = max_diag * (rows as f64) * f64::EPSILON * 1e3;
    if let Some(j) = diag.iter().position(|d| d.abs() <= tol) {
        return Err(Error::Numerical(format!(
            "singular least-squares system (column {j} is linearly dependent)"
        )));
    }

    let mut x = Matrix::zeros(l, k);
    for c in 0..k {
        for j in (0..l).rev() {
            let mut acc = rhs[c][j];
            for p in j + 1..l {
                acc -= q[p][j] * x.get(p, c) * scales[p];
            }
            x.set(j, c, acc / diag[j] / scales[j]);
        }
    }
    Ok(x)
}
