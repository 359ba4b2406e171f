//! Dense vectors and matrices in `f64`, a cyclic Jacobi eigensolver for
//! symmetric matrices, a Householder route for Gram matrices `BᵀB` with few
//! rows, and least-squares affine subspace fitting.

use std::cmp::Ordering;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense column vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting NaN and infinities.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("vector entry {i} is not finite")));
        }
        Ok(Vector(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self + alpha * dir`
    pub fn offset(&self, alpha: f64, dir: &[f64]) -> Vector {
        Vector(self.0.iter().zip(dir).map(|(a, d)| a + alpha * d).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Vector {
        Vector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * alpha).collect())
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Vector> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self.scaled(1.0 / n))
    }

    /// Index of the largest entry (first one on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &x) in self.0.iter().enumerate() {
            if best.is_none_or(|b| x > self.0[b]) {
                best = Some(i);
            }
        }
        best
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Vector {
    fn from(v: [f64; N]) -> Self {
        Vector(v.to_vec())
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

/// Inner product with four interleaved partial sums combined as
/// `(s0 + s1) + (s2 + s3)`, then the tail in order. The order is fixed, so
/// results are reproducible; it differs from a plain left fold.
/// `y += alpha · x`
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut s = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    let mut total = (s[0] + s[1]) + (s[2] + s[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        total += x * y;
    }
    total
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
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
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            m.data[i * n + i] = x;
        }
        m
    }

    /// Panics when the rows are ragged; meant for literals in tests and docs.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>], rows: usize) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, &x) in c.iter().enumerate() {
                m.data[i * cols.len() + j] = x;
            }
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        Vector((0..self.rows).map(|i| self.data[i * self.cols + j]).collect())
    }

    pub fn transpose(&self) -> Matrix {
        const BLOCK: usize = 32;
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i0 in (0..self.rows).step_by(BLOCK) {
            for j0 in (0..self.cols).step_by(BLOCK) {
                for i in i0..(i0 + BLOCK).min(self.rows) {
                    for j in j0..(j0 + BLOCK).min(self.cols) {
                        t.data[j * self.rows + i] = self.data[i * self.cols + j];
                    }
                }
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product, summing each row left to right.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vector> {
        if self.cols != x.len() {
            return Err(Error::shape(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(Vector((0..self.rows).map(|i| dot(self.row(i), x)).collect()))
    }

    /// Scales row `i` by `d[i]`.
    pub fn scale_rows(&mut self, d: &[f64]) {
        for (i, &s) in d.iter().enumerate().take(self.rows) {
            for x in self.row_mut(i) {
                *x *= s;
            }
        }
    }

    /// Scales column `j` by `d[j]`.
    pub fn scale_columns(&mut self, d: &[f64]) {
        for i in 0..self.rows {
            for (x, &s) in self.row_mut(i).iter_mut().zip(d) {
                *x *= s;
            }
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape("matrix sum of different shapes"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest entrywise absolute difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Matrix) -> Option<f64> {
        (self.shape() == other.shape()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        })
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                (i + 1..self.cols).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol)
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
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

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
///
/// Column `i` of `eigenvectors` belongs to `eigenvalues[i]`. Every column has
/// its first entry of magnitude above `1e-12` positive, and equal eigenvalues
/// are ordered lexicographically by their eigenvectors, so the decomposition is
/// a pure function of the input bits.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SymmetricEigen {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, i: usize) -> Vector {
        self.eigenvectors.column(i)
    }

    /// `Q diag(λ) Qᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let q = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n).map(|k| q[(i, k)] * self.eigenvalues[k] * q[(j, k)]).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// Linear combination `Σ coeffs[k] * q_{indices[k]}`.
    pub fn combine(&self, indices: &[usize], coeffs: &[f64]) -> Vector {
        let q = &self.eigenvectors;
        let mut out = vec![0.0; q.rows()];
        for (r, o) in out.iter_mut().enumerate() {
            let row = q.row(r);
            *o = indices.iter().zip(coeffs).map(|(&i, c)| c * row[i]).sum();
        }
        Vector(out)
    }
}

const SIGN_EPS: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps run until the off-diagonal Frobenius norm drops below
/// `1e-13 · ‖m‖_F`.
pub fn sym_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    if !m.is_square() {
        return Err(Error::contract(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let scale = m.frobenius_norm();
    if !scale.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    if !m.is_symmetric(1e-12 * scale.max(1.0)) {
        return Err(Error::contract("eigendecomposition needs a symmetric matrix"));
    }

    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > JACOBI_TOL * scale {
        return Err(Error::Numeric("Jacobi sweeps did not converge".into()));
    }

    let pairs = (0..n)
        .map(|k| (a[(k, k)], (0..n).map(|i| v[(i, k)]).collect()))
        .collect();
    Ok(assemble(pairs, n))
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One rotation in the (p, q) plane zeroing `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
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
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Applies the sign convention and the (eigenvalue, eigenvector) ordering.
fn assemble(mut pairs: Vec<(f64, Vec<f64>)>, n: usize) -> SymmetricEigen {
    for (_, vec) in pairs.iter_mut() {
        if let Some(&lead) = vec.iter().find(|x| x.abs() > SIGN_EPS) {
            if lead < 0.0 {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    pairs.sort_by(|(la, va), (lb, vb)| {
        la.total_cmp(lb).then_with(|| {
            va.iter()
                .zip(vb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    let cols = pairs.len();
    let mut eigenvalues = Vec::with_capacity(cols);
    let mut by_row = Vec::with_capacity(cols * n);
    for (l, vec) in pairs {
        eigenvalues.push(l);
        by_row.extend_from_slice(&vec);
    }
    let eigenvectors = Matrix {
        rows: cols,
        cols: n,
        data: by_row,
    }
    .transpose();
    SymmetricEigen {
        eigenvalues,
        eigenvectors,
    }
}

/// Eigendecomposition of `BᵀB` for a wide `B` (`rows < cols`) without
/// running Jacobi on the `cols × cols` product.
///
/// A Householder factorization `Bᵀ = Q [R; 0]` gives
/// `BᵀB = Q diag(R Rᵀ, 0) Qᵀ`; only the small `R Rᵀ` is diagonalized and the
/// trailing columns of `Q` span the exact kernel (eigenvalue `0.0`).
pub fn gram_eigen(b: &Matrix) -> Result<SymmetricEigen> {
    let (m, n) = b.shape();
    if m >= n {
        let bt = b.transpose();
        let mut g = bt.matmul(b)?;
        symmetrize(&mut g);
        return sym_eigen(&g);
    }
    if !b.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }

    // Householder QR of Bᵀ (n × m), reflectors kept for forming Q.
    let mut a = b.transpose();
    let mut reflectors: Vec<(usize, Vec<f64>, f64)> = Vec::with_capacity(m);
    for j in 0..m {
        let x: Vec<f64> = (j..n).map(|i| a[(i, j)]).collect();
        let norm = dot(&x, &x).sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut vref = x;
        vref[0] -= alpha;
        let vv = dot(&vref, &vref);
        if vv == 0.0 {
            continue;
        }
        let beta = 2.0 / vv;
        for c in j..m {
            let s: f64 = beta * (j..n).map(|i| vref[i - j] * a[(i, c)]).sum::<f64>();
            for i in j..n {
                a[(i, c)] -= s * vref[i - j];
            }
        }
        reflectors.push((j, vref, beta));
    }

    let mut r = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            r[(i, j)] = a[(i, j)];
        }
    }
    let mut small = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let s = dot(r.row(i), r.row(j));
            small[(i, j)] = s;
            small[(j, i)] = s;
        }
    }
    let inner = sym_eigen(&small)?;

    // Qᵀ = H_{m-1} ⋯ H_0, accumulated by row-wise rank-one updates so that
    // row k of `qt` is column k of Q.
    let mut qt = Matrix::identity(n);
    let mut w = vec![0.0; n];
    for (j, vref, beta) in &reflectors {
        w.iter_mut().for_each(|x| *x = 0.0);
        for (i, &vi) in vref.iter().enumerate() {
            if vi != 0.0 {
                axpy(&mut w, vi, qt.row(j + i));
            }
        }
        for (i, &vi) in vref.iter().enumerate() {
            let s = beta * vi;
            if s != 0.0 {
                axpy(qt.row_mut(j + i), -s, &w);
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n);
    for k in 0..m {
        let mut col = vec![0.0; n];
        for l in 0..m {
            axpy(&mut col, inner.eigenvectors[(l, k)], qt.row(l));
        }
        pairs.push((inner.eigenvalues[k], col));
    }
    for k in m..n {
        pairs.push((0.0, qt.row(k).to_vec()));
    }
    Ok(assemble(pairs, n))
}

/// Averages `m` with its transpose in place.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.rows();
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Least-squares affine subspace through a point cloud.
#[derive(Debug, Clone)]
pub struct AffineFit {
    /// Orthonormal basis of the fitted directions, one per column.
    pub basis: Matrix,
    /// Orthonormal basis of the orthogonal complement, one per column.
    pub complement: Matrix,
    /// Centroid of the points; the subspace passes through it.
    pub offset: Vector,
    /// Root-mean-square Euclidean distance of the points to the subspace.
    pub rms_residual: f64,
}

impl AffineFit {
    /// Unit normal of a fitted hyperplane (codimension one).
    pub fn normal(&self) -> Option<Vector> {
        (self.complement.cols() == 1).then(|| self.complement.column(0))
    }
}

/// Fits a `target_dim`-dimensional affine subspace by principal components of
/// the centred points.
pub fn fit_affine_subspace(points: &[Vector], target_dim: usize) -> Result<AffineFit> {
    if points.len() < target_dim + 1 {
        return Err(Error::contract(format!(
            "fitting a {target_dim}-dimensional subspace needs at least {} points, got {}",
            target_dim + 1,
            points.len()
        )));
    }
    let dim = points[0].dim();
    if points.iter().any(|p| p.dim() != dim) {
        return Err(Error::shape("points of mixed dimension"));
    }
    if target_dim > dim {
        return Err(Error::contract(format!(
            "target dimension {target_dim} exceeds ambient dimension {dim}"
        )));
    }
    let count = points.len() as f64;
    let mut centroid = vec![0.0; dim];
    for p in points {
        for (c, x) in centroid.iter_mut().zip(p.iter()) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= count);

    let mut cov = Matrix::zeros(dim, dim);
    for p in points {
        let d: Vec<f64> = p.iter().zip(&centroid).map(|(x, c)| x - c).collect();
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let s = cov[(i, j)] / count;
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let eig = sym_eigen(&cov)?;
    let split = dim - target_dim;
    let complement_cols: Vec<Vec<f64>> =
        (0..split).map(|k| eig.eigenvector(k).into_vec()).collect();
    let basis_cols: Vec<Vec<f64>> = (split..dim).map(|k| eig.eigenvector(k).into_vec()).collect();

    // Residual measured on the complement directly: ‖P_⊥ d‖² = Σ (c_k · d)².
    let mut sq = 0.0;
    for p in points {
        let d: Vec<f64> = p.iter().zip(&centroid).map(|(x, c)| x - c).collect();
        sq += complement_cols
            .iter()
            .map(|c| {
                let t = dot(c, &d);
                t * t
            })
            .sum::<f64>();
    }
    Ok(AffineFit {
        basis: Matrix::from_columns(&basis_cols, dim),
        complement: Matrix::from_columns(&complement_cols, dim),
        offset: Vector(centroid),
        rms_residual: (sq / count).sqrt(),
    })
}
