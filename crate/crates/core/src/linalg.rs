//! Dense row-major matrices and vectors, covariance estimation, and a cyclic
//! Jacobi eigensolver for symmetric matrices.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

pub const DEFAULT_EIGEN_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_SWEEPS: usize = 100;

/// Eigenvalues below this are treated as a genuine loss of definiteness
/// rather than rounding noise.
pub const PSD_CLAMP: f64 = -1e-10;

/// Dense vector of `f64`.
#[derive(Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|x| c * x).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
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

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!("{} entries", rows * cols), data.len()));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Like [`Matrix::new`] without the finiteness scan; for internal
    /// producers whose output is finite by construction.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    pub fn col(&self, j: usize) -> Vector {
        (0..self.rows).map(|i| self[(i, j)]).collect::<Vec<_>>().into()
    }

    pub fn diag(&self) -> Vector {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect::<Vec<_>>()
            .into()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
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

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|x| c * x).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    /// Largest absolute elementwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (i + 1..self.cols).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dims(
                format!("lhs cols {}", self.cols),
                format!("rhs rows {}", other.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm_nn(self, other, &mut out);
        Ok(out)
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dims(
                format!("lhs rows {}", self.rows),
                format!("rhs rows {}", other.rows),
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm_tn(self, other, &mut out);
        Ok(out)
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dims(
                format!("lhs cols {}", self.cols),
                format!("rhs cols {}", other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out[(i, j)] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::dims(self.cols, v.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect::<Vec<_>>().into())
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        debug_assert!(self.is_square());
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                let m = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

/// `out += a * b`. Zero entries of `a` are skipped, which matters for sparse
/// image inputs; skipping them does not change the result.
pub(crate) fn gemm_nn(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (k, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += x * bv;
            }
        }
    }
}

/// `out += aᵀ * b`.
pub(crate) fn gemm_tn(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let b_row = b.row(i);
        for (k, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let out_row = &mut out.data[k * n..(k + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += x * bv;
            }
        }
    }
}

/// Eigendecomposition `A = Q Λ Qᵀ` of a symmetric matrix.
///
/// Eigenvalues are sorted non-increasing. Each eigenvector column is signed
/// so that its largest-magnitude component is positive.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub q: Matrix,
    pub lambda: Vector,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.lambda.dim()
    }

    /// The `i`-th eigenvector (column `i` of `Q`).
    pub fn eigenvector(&self, i: usize) -> Vector {
        self.q.col(i)
    }

    /// Coefficients `Qᵀw` of `w` in the eigenbasis.
    pub fn coefficients(&self, w: &[f64]) -> Result<Vector> {
        if w.len() != self.dim() {
            return Err(Error::dims(self.dim(), w.len()));
        }
        let n = self.dim();
        let mut c = vec![0.0; n];
        for (k, &wk) in w.iter().enumerate() {
            for (ci, &qki) in c.iter_mut().zip(self.q.row(k)) {
                *ci += qki * wk;
            }
        }
        Ok(c.into())
    }

    /// `Q · diag(f(λ)) · Qᵀ`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.dim();
        let fl: Vec<f64> = self.lambda.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let qi = self.q.row(i);
            for j in i..n {
                let qj = self.q.row(j);
                let s: f64 = (0..n).map(|k| qi[k] * fl[k] * qj[k]).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.spectral_map(|l| l)
    }

    /// `‖QᵀQ − I‖_max`.
    pub fn orthogonality_error(&self) -> f64 {
        let qtq = self.q.t_matmul(&self.q).expect("square Q");
        qtq.max_abs_diff(&Matrix::identity(self.dim())).expect("same shape")
    }
}

/// Second-moment matrix of the rows of `samples`.
///
/// With `centered = false` this is `(1/n) XᵀX`, the covariance under the
/// zero-mean convention; with `centered = true` the sample mean is removed
/// first. Rows are accumulated in a canonical (sorted) order, so the result is
/// bit-identical for any permutation of the rows.
pub fn covariance(samples: &Matrix, centered: bool) -> Result<Matrix> {
    let (n, d) = samples.shape();
    if n < 2 {
        return Err(Error::invalid(format!("covariance needs at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::invalid("covariance needs at least one feature"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex_cmp(samples.row(a), samples.row(b)));

    let mean = if centered {
        let mut m = vec![0.0; d];
        for &i in &order {
            for (mk, &x) in m.iter_mut().zip(samples.row(i)) {
                *mk += x;
            }
        }
        m.iter_mut().for_each(|mk| *mk /= n as f64);
        m
    } else {
        vec![0.0; d]
    };

    let mut acc = vec![0.0; d * d];
    let mut centered_row = vec![0.0; d];
    for &i in &order {
        for ((c, &x), &m) in centered_row.iter_mut().zip(samples.row(i)).zip(&mean) {
            *c = x - m;
        }
        for j in 0..d {
            let xj = centered_row[j];
            if xj == 0.0 {
                continue;
            }
            let row = &mut acc[j * d..(j + 1) * d];
            for k in j..d {
                row[k] += xj * centered_row[k];
            }
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut out = Matrix::zeros(d, d);
    for j in 0..d {
        for k in j..d {
            let v = acc[j * d + k] * inv_n;
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    Ok(out)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Converged when the largest off-diagonal magnitude is at most
/// `tol · max(1, ‖A‖_max)`.
pub fn sym_eigen(a: &Matrix, tol: f64, max_sweeps: usize) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let scale = a.max_abs().max(1.0);
    if !a.data().iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if !a.is_symmetric(1e-12 * scale) {
        return Err(Error::invalid("matrix is not symmetric"));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let threshold = tol * scale;

    let off_diag = |m: &Matrix| {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(m[(i, j)].abs());
            }
        }
        off
    };

    let mut sweeps = 0;
    loop {
        let off = off_diag(&m);
        if off <= threshold {
            break;
        }
        if sweeps == max_sweeps {
            return Err(Error::Convergence { sweeps, off_diag: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let lambda: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut q = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        let mut pivot = 0.0_f64;
        for k in 0..n {
            let x = v[(k, old_col)];
            if x.abs() > pivot.abs() {
                pivot = x;
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            q[(k, new_col)] = sign * v[(k, old_col)];
        }
    }
    Ok(SymEigen {
        q,
        lambda: lambda.into(),
    })
}

/// Applies `A ← JᵀAJ`, `V ← VJ` for the plane rotation in `(p, q)`, then
/// zeroes the annihilated pair.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

pub fn sym_eigen_default(a: &Matrix) -> Result<SymEigen> {
    sym_eigen(a, DEFAULT_EIGEN_TOL, DEFAULT_MAX_SWEEPS)
}

/// Fails with [`Error::NotPsd`] if any eigenvalue is below [`PSD_CLAMP`].
pub(crate) fn check_psd(eig: &SymEigen) -> Result<()> {
    match eig.lambda.iter().copied().find(|&l| l < PSD_CLAMP) {
        Some(eigenvalue) => Err(Error::NotPsd { eigenvalue }),
        None => Ok(()),
    }
}

/// Principal square root `B = Q Λ^½ Qᵀ` of a PSD matrix, so that `B·B = A`.
/// Eigenvalues in `[PSD_CLAMP, 0)` are clamped to zero.
pub fn matrix_sqrt(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen_default(a)?;
    check_psd(&eig)?;
    let mut b = eig.spectral_map(|l| l.max(0.0).sqrt());
    b.symmetrize();
    Ok(b)
}

/// `wᵀ A w` (not square-rooted).
pub fn quad_form(w: &[f64], a: &Matrix) -> Result<f64> {
    if !a.is_square() || a.rows() != w.len() {
        return Err(Error::dims(
            format!("{0}x{0} matrix", w.len()),
            format!("{:?}", a.shape()),
        ));
    }
    Ok(w.iter().enumerate().map(|(i, &wi)| wi * dot(a.row(i), w)).sum())
}
