//! Small dense row-major matrices and the few factorizations the fitters need.
//!
//! Everything here works on `H×H` matrices where `H` is the data dimension
//! (two or three in practice), so the kernels favour robustness over speed.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

/// Relative off-diagonal tolerance for the Jacobi sweeps.
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has the wrong length");
        Matrix { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Counter-clockwise rotation by `angle` radians in the plane.
    pub fn rotation_2d(angle: f64) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        Matrix::from_row_major(2, 2, vec![c, -s, s, c])
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
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

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(self.cols, x.len(), "mul_vec shape mismatch");
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `selfᵀ · x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tr_mul_vec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * factor).collect() }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `tr(selfᵀ · other)`, the Frobenius inner product.
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_dot(self).sqrt()
    }

    /// Adds `weight · a · bᵀ` in place.
    pub fn add_outer(&mut self, weight: f64, a: &[f64], b: &[f64]) {
        assert_eq!((self.rows, self.cols), (a.len(), b.len()));
        for (i, &ai) in a.iter().enumerate() {
            let wa = weight * ai;
            for (j, &bj) in b.iter().enumerate() {
                self.data[i * self.cols + j] += wa * bj;
            }
        }
    }

    /// Determinant by LU decomposition with partial pivoting.
    pub fn determinant(&self) -> f64 {
        assert!(self.is_square(), "determinant of a non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs())).unwrap_or(col);
            if a[pivot * n + col] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                }
                det = -det;
            }
            let p = a[col * n + col];
            det *= p;
            for r in col + 1..n {
                let f = a[r * n + col] / p;
                if f != 0.0 {
                    for j in col..n {
                        a[r * n + j] -= f * a[col * n + j];
                    }
                }
            }
        }
        det
    }

    /// Frobenius distance of `selfᵀ·self` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        self.transpose().matmul(self).sub(&Matrix::identity(self.cols)).frobenius_norm()
    }

    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    fn set_column(&mut self, j: usize, v: &[f64]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Thin singular value decomposition `A = U·diag(S)·Vᵀ` of a square matrix.
///
/// Singular values are sorted in decreasing order; `U` and `V` are orthogonal.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

/// One-sided (Hestenes) Jacobi SVD of a square matrix.
pub fn svd(a: &Matrix) -> Svd {
    assert!(a.is_square(), "svd expects a square matrix");
    let n = a.rows;
    let mut w = a.clone();
    let mut v = Matrix::identity(n);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let (wp, wq) = (w[(i, p)], w[(i, q)]);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..n {
                        let (mp, mq) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * mp - s * mq;
                        m[(i, q)] = s * mp + c * mq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = (0..n).map(|j| (norm_sq(&w.column(j)).sqrt(), j)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let largest = order.first().map_or(0.0, |o| o.0);
    let mut u = Matrix::zeros(n, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (dst, &(sigma, src)) in order.iter().enumerate() {
        singular_values.push(sigma);
        v_sorted.set_column(dst, &v.column(src));
        // Columns belonging to negligible singular values are pure noise;
        // they are replaced by an orthonormal completion below.
        if sigma > f64::EPSILON * largest * (n as f64) && sigma > 0.0 {
            let col: Vec<f64> = w.column(src).iter().map(|x| x / sigma).collect();
            u.set_column(dst, &col);
        }
    }
    orthonormalize_columns(&mut u, &singular_values, largest);
    Svd { u, singular_values, v: v_sorted }
}

/// Modified Gram-Schmidt over the columns of `u`, in order, completing columns
/// whose singular value is negligible from the standard basis.
fn orthonormalize_columns(u: &mut Matrix, sigma: &[f64], largest: f64) {
    let n = u.rows;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let keep = sigma[j] > f64::EPSILON * largest * (n as f64) && sigma[j] > 0.0;
        let candidates: Vec<Vec<f64>> = if keep { vec![u.column(j)] } else { Vec::new() };
        let unit_vectors = (0..n).map(|e| {
            let mut c = vec![0.0; n];
            c[e] = 1.0;
            c
        });
        let mut chosen = None;
        for mut c in candidates.into_iter().chain(unit_vectors) {
            for _ in 0..2 {
                for b in &basis {
                    let d = dot(&c, b);
                    for (ci, bi) in c.iter_mut().zip(b) {
                        *ci -= d * bi;
                    }
                }
            }
            let norm = norm_sq(&c).sqrt();
            if norm > 1e-6 {
                c.iter_mut().for_each(|x| *x /= norm);
                chosen = Some(c);
                break;
            }
        }
        let c = chosen.expect("the standard basis always completes an orthonormal set");
        u.set_column(j, &c);
        basis.push(c);
    }
}

/// QR decomposition by modified Gram-Schmidt. `R` has a positive diagonal
/// whenever `a` has full rank.
pub fn qr(a: &Matrix) -> (Matrix, Matrix) {
    assert!(a.is_square(), "qr expects a square matrix");
    let n = a.rows;
    let mut q = a.clone();
    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        let mut col = q.column(j);
        for k in 0..j {
            let qk = q.column(k);
            let d = dot(&qk, &col);
            r[(k, j)] = d;
            for (c, x) in col.iter_mut().zip(&qk) {
                *c -= d * x;
            }
        }
        let norm = norm_sq(&col).sqrt();
        r[(j, j)] = norm;
        if norm > 0.0 {
            col.iter_mut().for_each(|x| *x /= norm);
        }
        q.set_column(j, &col);
    }
    (q, r)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or `None` when a pivot is not positive.
pub fn cholesky(a: &Matrix) -> Option<Matrix> {
    assert!(a.is_square(), "cholesky expects a square matrix");
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solves `L·y = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Matrix, b: &[f64], out: &mut [f64]) {
    let n = l.rows;
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * out[k];
        }
        out[i] = sum / l[(i, i)];
    }
}
