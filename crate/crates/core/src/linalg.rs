//! Small dense matrices for Jacobians and cocycle products.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        let mut m = Matrix::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix data of length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::usage("ragged matrix rows"));
        }
        Matrix::from_row_major(r, c, rows.concat())
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[f64]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Induced ∞-norm (maximum absolute row sum).
    pub fn inf_norm(&self) -> f64 {
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Determinant by partial-pivot LU.
    pub fn det(&self) -> f64 {
        assert!(self.is_square(), "determinant of a non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
                .unwrap_or(k);
            if a[p * n + k] == 0.0 {
                return 0.0;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                det = -det;
            }
            let pivot = a[k * n + k];
            det *= pivot;
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                for j in k..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
            }
        }
        det
    }

    pub fn is_integer(&self) -> bool {
        self.data.iter().all(|x| x.fract() == 0.0 && x.is_finite())
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Option<Matrix> {
        if !self.is_square() {
            return None;
        }
        self.to_nalgebra().try_inverse().map(|m| Matrix::from_nalgebra(&m))
    }

    pub fn spectral_norm(&self) -> f64 {
        self.singular_values().first().copied().unwrap_or(0.0)
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.to_nalgebra().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Moduli of the (possibly complex) eigenvalues, descending.
    pub fn eigenvalue_moduli(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self
            .to_nalgebra()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .collect();
        m.sort_by(|a, b| b.total_cmp(a));
        m
    }

    /// Real eigenvalues with a unit eigenvector each, or `None` when the
    /// spectrum is complex or the matrix is not diagonalizable.
    pub fn real_eigen_decomposition(&self) -> Option<(Vec<f64>, Matrix)> {
        let n = self.rows;
        let eig = self.to_nalgebra().complex_eigenvalues();
        let scale = self.max_abs().max(1.0);
        if eig.iter().any(|z| z.im.abs() > 1e-12 * scale) {
            return None;
        }
        let mut values: Vec<f64> = eig.iter().map(|z| z.re).collect();
        values.sort_by(|a, b| b.abs().total_cmp(&a.abs()).then(b.total_cmp(a)));

        let mut vectors = Matrix::zeros(n, n);
        let mut col = 0;
        let mut i = 0;
        while i < n {
            let gamma = values[i];
            let mult = values[i..]
                .iter()
                .take_while(|v| (**v - gamma).abs() <= 1e-9 * scale)
                .count();
            let shifted = self.to_nalgebra() - DMatrix::identity(n, n) * gamma;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
            for &k in order.iter().take(mult) {
                if svd.singular_values[k] > 1e-8 * scale {
                    return None;
                }
                let v: Vec<f64> = (0..n).map(|j| v_t[(k, j)]).collect();
                vectors.set_column(col, &v);
                col += 1;
            }
            for v in values.iter_mut().skip(i).take(mult) {
                *v = gamma;
            }
            i += mult;
        }
        if vectors.det().abs() < 1e-10 {
            return None;
        }
        Some((values, vectors))
    }

    /// k-th compound matrix: entries are the k×k minors indexed by
    /// lexicographically ordered row and column subsets.
    pub fn compound(&self, k: usize) -> Matrix {
        let rs = subsets(self.rows, k);
        let cs = subsets(self.cols, k);
        let mut out = Matrix::zeros(rs.len(), cs.len());
        for (a, r) in rs.iter().enumerate() {
            for (b, c) in cs.iter().enumerate() {
                let mut minor = Matrix::zeros(k, k);
                for (i, &ri) in r.iter().enumerate() {
                    for (j, &cj) in c.iter().enumerate() {
                        minor[(i, j)] = self[(ri, cj)];
                    }
                }
                out[(a, b)] = minor.det();
            }
        }
        out
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
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

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

/// Householder QR with the sign convention `R_ii ≥ 0`.
pub struct Qr {
    pub q: Matrix,
    pub r: Matrix,
}

impl Qr {
    pub fn r_diagonal(&self) -> Vec<f64> {
        (0..self.r.rows().min(self.r.cols()))
            .map(|i| self.r[(i, i)])
            .collect()
    }
}

/// Thin QR of a square matrix; column signs of `Q` are flipped so the
/// diagonal of `R` is nonnegative.
pub fn qr_positive(a: &Matrix) -> Qr {
    let m = a.rows();
    let n = a.cols();
    let mut r = a.clone();
    let mut q = Matrix::identity(m);
    for k in 0..n.min(m.saturating_sub(1)) {
        let norm: f64 = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let s: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..m {
                r[(i, j)] -= s * v[i - k];
            }
        }
        // accumulate Q = H_1 H_2 ... by right-multiplying
        for i in 0..m {
            let s: f64 = (k..m).map(|j| q[(i, j)] * v[j - k]).sum::<f64>() * 2.0 / vnorm2;
            for j in k..m {
                q[(i, j)] -= s * v[j - k];
            }
        }
    }
    for k in 0..n.min(m) {
        if r[(k, k)] < 0.0 {
            for j in 0..n {
                r[(k, j)] = -r[(k, j)];
            }
            for i in 0..m {
                q[(i, k)] = -q[(i, k)];
            }
        }
        for i in k + 1..m {
            r[(i, k)] = 0.0;
        }
    }
    Qr { q, r }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn qr_reconstructs_and_has_positive_diagonal() {
        let a = m(&[&[2.0, -1.0, 0.5], &[1.0, 3.0, -2.0], &[-4.0, 0.0, 1.0]]);
        let qr = qr_positive(&a);
        let back = &qr.q * &qr.r;
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
            assert!(qr.r[(i, i)] >= 0.0);
        }
        let qtq = &qr.q.transpose() * &qr.q;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[(i, j)] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn determinant_and_compound() {
        let a = m(&[&[2.0, 1.0], &[1.0, 1.0]]);
        assert!((a.det() - 1.0).abs() < 1e-15);
        assert_eq!(a.compound(2).as_slice(), &[1.0]);
        assert_eq!(a.compound(1), a);
        let b = m(&[&[1.0, 2.0, 3.0], &[0.0, 1.0, 4.0], &[5.0, 6.0, 0.0]]);
        assert!((b.det() - 1.0).abs() < 1e-12);
        // Cauchy–Binet: compound is multiplicative
        let lhs = (&a.compound(1) * &a.compound(1)).compound(1);
        assert_eq!(lhs, (&a * &a).compound(1));
        let c2 = (&b * &b).compound(2);
        let p2 = &b.compound(2) * &b.compound(2);
        for i in 0..3 {
            for j in 0..3 {
                assert!((c2[(i, j)] - p2[(i, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eigen_decomposition_of_cat_matrix() {
        let a = m(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let (vals, vecs) = a.real_eigen_decomposition().unwrap();
        let phi = (3.0 + 5f64.sqrt()) / 2.0;
        assert!((vals[0] - phi).abs() < 1e-12);
        assert!((vals[1] - 1.0 / phi).abs() < 1e-12);
        for k in 0..2 {
            let v = vecs.column(k);
            let av = a.mul_vec(&v);
            for i in 0..2 {
                assert!((av[i] - vals[k] * v[i]).abs() < 1e-12);
            }
        }
        let id = Matrix::identity(2);
        let (vals, _) = id.real_eigen_decomposition().unwrap();
        assert_eq!(vals, vec![1.0, 1.0]);
        let shear = m(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert!(shear.real_eigen_decomposition().is_none());
    }
}
