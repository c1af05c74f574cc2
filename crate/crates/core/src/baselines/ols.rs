//! Ordinary least squares and the Gaussian AIC.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::OrderedQr;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// One coefficient per input column; dropped columns get 0.
    pub beta: DVector<f64>,
    pub rss: f64,
    /// Rank of the design.
    pub df: usize,
    /// Columns dropped as linearly dependent on earlier ones.
    pub dropped: Vec<usize>,
}

/// Least squares of `y` on the columns of `x` (no intercept is added).
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    let qr = OrderedQr::new(x);
    if qr.rank() == 0 {
        return Err(Error::DegenerateFit("every column was dropped".into()));
    }
    let b = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let coef = qr.solve(&b);
    let mut beta = DVector::zeros(x.ncols());
    for (r, &c) in qr.kept.iter().enumerate() {
        beta[c] = coef[(r, 0)];
    }
    Ok(OlsFit {
        beta,
        rss: qr.residuals(&b).norm_squared(),
        df: qr.rank(),
        dropped: qr.dropped,
    })
}

/// `n·ln(RSS/n) + 2k`. A zero RSS gives `-inf`.
pub fn aic(rss: f64, n: usize, n_params: usize) -> f64 {
    if rss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    nf * (rss / nf).ln() + 2.0 * n_params as f64
}
