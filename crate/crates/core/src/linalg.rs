//! Dense linear-algebra building blocks on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::std_normal;

/// Relative tolerance below which a column is treated as linearly dependent on
/// the columns before it.
pub const RANK_TOL: f64 = 1e-10;

/// Thin QR factorization that keeps columns in their given order and drops
/// any column whose component orthogonal to the earlier kept columns is
/// numerically zero.
///
/// Orthogonalization is classical Gram-Schmidt applied twice, which is enough
/// to keep `QᵀQ = I` to working precision.
#[derive(Debug, Clone)]
pub struct OrderedQr {
    /// n × r orthonormal columns.
    pub q: DMatrix<f64>,
    /// r × r upper-triangular factor for the kept columns.
    pub r: DMatrix<f64>,
    /// Indices (into the input columns) that were kept.
    pub kept: Vec<usize>,
    /// Indices dropped as dependent.
    pub dropped: Vec<usize>,
}

impl OrderedQr {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (n, m) = a.shape();
        let mut qcols: Vec<DVector<f64>> = Vec::with_capacity(m.min(n));
        let mut rcols: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..m {
            let col = a.column(j).into_owned();
            let orig = col.norm();
            let mut v = col;
            let mut coef = vec![0.0; qcols.len()];
            for _ in 0..2 {
                for (i, q) in qcols.iter().enumerate() {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                    coef[i] += c;
                }
            }
            let norm = v.norm();
            if orig == 0.0 || norm <= RANK_TOL * orig || qcols.len() == n {
                dropped.push(j);
                continue;
            }
            v /= norm;
            coef.push(norm);
            qcols.push(v);
            rcols.push(coef);
            kept.push(j);
        }
        let rank = qcols.len();
        let q = if rank == 0 {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&qcols)
        };
        let mut r = DMatrix::zeros(rank, rank);
        for (j, c) in rcols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                r[(i, j)] = *v;
            }
        }
        OrderedQr { q, r, kept, dropped }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Least-squares coefficients (for the kept columns) for every column of `b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return DMatrix::zeros(0, b.ncols());
        }
        let qtb = self.q.transpose() * b;
        self.r
            .solve_upper_triangular(&qtb)
            .expect("R has a nonzero diagonal by construction")
    }

    /// Residuals `b - Q Qᵀ b` for every column of `b`.
    pub fn residuals(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return b.clone();
        }
        b - &self.q * (self.q.transpose() * b)
    }
}

/// Prepend a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::from_element(n, x.ncols() + 1, 1.0);
    out.view_mut((0, 1), (n, x.ncols())).copy_from(x);
    out
}

/// Select a subset of columns.
pub fn columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_columns(idx.iter())
}

/// Select a subset of rows.
pub fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_rows(idx.iter())
}

pub fn select(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Column means and population standard deviations (divisor n).
pub fn column_moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.sum() / n;
        let v = col.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
        means.push(m);
        sds.push(v.sqrt());
    }
    (means, sds)
}

/// `(x - mean) / scale` column-wise; a zero scale leaves the column centered only.
pub fn standardize_with(x: &DMatrix<f64>, means: &[f64], scales: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let s = if scales[j] > 0.0 { scales[j] } else { 1.0 };
        col.apply(|v| *v = (*v - means[j]) / s);
    }
    out
}

/// Draw from `N(P⁻¹ b, P⁻¹)` given a symmetric positive-definite precision `P`.
pub fn sample_from_precision<R: Rng + ?Sized>(
    rng: &mut R,
    precision: DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let dim = b.len();
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Estimation("precision matrix is not positive definite".into()))?;
    let z = DVector::from_iterator(dim, (0..dim).map(|_| std_normal(rng)));
    sample_with_normals(chol, b, &z)
}

/// As [`sample_from_precision`], with the standard normal vector supplied.
pub fn sample_from_precision_with(precision: DMatrix<f64>, b: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Estimation("precision matrix is not positive definite".into()))?;
    sample_with_normals(chol, b, z)
}

fn sample_with_normals(
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    b: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mean = chol.solve(b);
    let l = chol.l();
    let noise = l
        .ad_solve_lower_triangular(z)
        .ok_or_else(|| Error::Estimation("singular Cholesky factor".into()))?;
    Ok(mean + noise)
}
