//! Dense row-major matrices and vectors sized for desk-scale analysis.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self - other`, checked.
    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        check_dims(self.dim(), other.dim())?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self + other`, checked.
    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_dims(self.dim(), other.dim())?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &[f64]) {
        debug_assert_eq!(self.dim(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += factor * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(
            format!("dimension {expected}"),
            format!("dimension {actual}"),
        ));
    }
    Ok(())
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Dense real matrix stored in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries. Entries must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, v) in diag.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("rows of equal length", "ragged rows"));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                format!("inner dimension {}", self.cols),
                format!("inner dimension {}", other.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::shape(
                format!("vector of dimension {}", self.cols),
                format!("dimension {}", v.len()),
            ));
        }
        Ok(self.matvec_unchecked(v))
    }

    pub(crate) fn matvec_unchecked(&self, v: &[f64]) -> Vector {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Symmetry check relative to the largest entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.rows).all(|i| {
            (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= rel_tol * scale)
        })
    }

    /// `(M + Mᵀ) / 2`
    pub fn symmetrized(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self[(i, j)] + self[(j, i)])
        })
    }

    pub fn powi(&self, k: usize) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::shape("square matrix", format!("{}x{}", self.rows, self.cols)));
        }
        let mut result = Matrix::identity(self.rows);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = result.matmul(&base)?;
            }
            k >>= 1;
            if k > 0 {
                base = base.matmul(&base)?;
            }
        }
        Ok(result)
    }

    /// Kronecker product: `out[i·rb + k, j·cb + l] = a[i, j] · b[k, l]`.
    pub fn kron(&self, other: &Matrix) -> Matrix {
        let (rb, cb) = (other.rows, other.cols);
        let cols = self.cols * cb;
        let mut out = Matrix::zeros(self.rows * rb, cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                for k in 0..rb {
                    let dst = (i * rb + k) * cols + j * cb;
                    for l in 0..cb {
                        out.data[dst + l] = a * other.data[k * cb + l];
                    }
                }
            }
        }
        out
    }

    /// Stacks the columns into one vector.
    pub fn vec_columns(&self) -> Vector {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self[(i, j)]);
            }
        }
        Vector(out)
    }

    /// Inverse of [`Matrix::vec_columns`].
    pub fn from_vec_columns(rows: usize, cols: usize, v: &[f64]) -> Result<Matrix> {
        if v.len() != rows * cols {
            return Err(Error::shape(rows * cols, v.len()));
        }
        Ok(Matrix::from_fn(rows, cols, |i, j| v[j * rows + i]))
    }

    /// Solves `self · X = rhs` by LU decomposition with partial pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if !self.is_square() || rhs.rows != self.rows {
            return Err(Error::shape(
                format!("square system with {} rows", self.rows),
                format!("{}x{} system, rhs {} rows", self.rows, self.cols, rhs.rows),
            ));
        }
        let n = self.rows;
        let mut lu = self.clone();
        let mut x = rhs.clone();
        let scale = self.max_abs();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| lu[(a, col)].abs().total_cmp(&lu[(b, col)].abs()))
                .unwrap_or(col);
            if lu[(pivot, col)].abs() <= 1e-14 * scale {
                return Err(Error::Decomposition("singular matrix in solve".into()));
            }
            if pivot != col {
                lu.swap_rows(pivot, col);
                x.swap_rows(pivot, col);
            }
            let p = lu[(col, col)];
            for r in col + 1..n {
                let factor = lu[(r, col)] / p;
                if factor == 0.0 {
                    continue;
                }
                for c in col..n {
                    let v = lu[(col, c)];
                    lu[(r, c)] -= factor * v;
                }
                for c in 0..x.cols {
                    let v = x[(col, c)];
                    x[(r, c)] -= factor * v;
                }
            }
        }
        for col in (0..n).rev() {
            let p = lu[(col, col)];
            for c in 0..x.cols {
                let mut acc = x[(col, c)];
                for k in col + 1..n {
                    acc -= lu[(col, k)] * x[(k, c)];
                }
                x[(col, c)] = acc / p;
            }
        }
        Ok(x)
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vector> {
        let b = Matrix::new(rhs.len(), 1, rhs.to_vec())?;
        Ok(Vector(self.solve(&b)?.data))
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }

    /// Householder QR of a square matrix. The diagonal of `R` is made
    /// non-negative by flipping the matching columns of `Q`.
    pub fn qr(&self) -> Result<(Matrix, Matrix)> {
        if !self.is_square() {
            return Err(Error::shape("square matrix", format!("{}x{}", self.rows, self.cols)));
        }
        let n = self.rows;
        let mut r = self.clone();
        let mut q = Matrix::identity(n);
        for k in 0..n.saturating_sub(1) {
            let norm: f64 = (k..n).map(|i| r[(i, k)].powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (k..n).map(|i| r[(i, k)]).collect();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            // R <- H R, Q <- Q H with H = I - 2 v vᵀ / (vᵀ v)
            for c in 0..n {
                let s: f64 = (k..n).map(|i| v[i - k] * r[(i, c)]).sum::<f64>() * 2.0 / vnorm2;
                for i in k..n {
                    r[(i, c)] -= s * v[i - k];
                }
            }
            for row in 0..n {
                let s: f64 = (k..n).map(|i| q[(row, i)] * v[i - k]).sum::<f64>() * 2.0 / vnorm2;
                for i in k..n {
                    q[(row, i)] -= s * v[i - k];
                }
            }
        }
        for k in 0..n {
            if r[(k, k)] < 0.0 {
                for c in 0..n {
                    r[(k, c)] = -r[(k, c)];
                }
                for row in 0..n {
                    q[(row, k)] = -q[(row, k)];
                }
            }
            for i in k + 1..n {
                r[(i, k)] = 0.0;
            }
        }
        Ok((q, r))
    }

    /// Cholesky factor of a symmetric positive semi-definite matrix using
    /// diagonal pivoting. Returns `L` (n × rank) with `L Lᵀ = self`.
    pub fn cholesky_psd(&self) -> Result<Matrix> {
        if !self.is_symmetric(1e-10) {
            return Err(Error::Decomposition(
                "covariance must be symmetric".into(),
            ));
        }
        let n = self.rows;
        let scale = self.max_abs();
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE) * n.max(1) as f64;
        let mut work = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = Matrix::zeros(n, n);
        let mut rank = 0;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, work[(i, i)]))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if pmax < -tol {
                return Err(Error::Decomposition(
                    "matrix is not positive semi-definite".into(),
                ));
            }
            if pmax <= tol {
                break;
            }
            if p != k {
                work.swap_rows(p, k);
                work.swap_cols(p, k);
                l.swap_rows(p, k);
                perm.swap(p, k);
            }
            let pivot = work[(k, k)].sqrt();
            l[(k, k)] = pivot;
            for i in k + 1..n {
                l[(i, k)] = work[(i, k)] / pivot;
            }
            for i in k + 1..n {
                for j in k + 1..=i {
                    let v = work[(i, j)] - l[(i, k)] * l[(j, k)];
                    work[(i, j)] = v;
                    work[(j, i)] = v;
                }
            }
            rank += 1;
        }
        // whatever is left of the Schur complement must vanish
        for i in rank..n {
            for j in rank..n {
                if work[(i, j)].abs() > tol.max(1e-10 * scale) {
                    return Err(Error::Decomposition(
                        "matrix is not positive semi-definite".into(),
                    ));
                }
            }
        }
        let mut out = Matrix::zeros(n, rank);
        for (row, &orig) in perm.iter().enumerate() {
            for c in 0..rank {
                out[(orig, c)] = l[(row, c)];
            }
        }
        Ok(out)
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for r in 0..self.rows {
            self.data.swap(r * self.cols + a, r * self.cols + b);
        }
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns eigenvalues in ascending order and the matching orthonormal
    /// eigenvectors as columns.
    pub fn symmetric_eigen(&self) -> Result<(Vec<f64>, Matrix)> {
        if !self.is_symmetric(1e-10) {
            return Err(Error::Decomposition(
                "eigen-decomposition requires a symmetric matrix".into(),
            ));
        }
        let n = self.rows;
        let mut a = self.symmetrized();
        let mut v = Matrix::identity(n);
        let total: f64 = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)].powi(2))
                .sum::<f64>()
                .sqrt();
            if off <= 1e-15 * total.max(f64::MIN_POSITIVE) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
        Ok((values, vectors))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}
