//! Lasso by cyclic coordinate descent with a cross-validated penalty.
//!
//! Columns are standardized and the target centered internally; the
//! objective on that scale is `(1/2n)‖y - Zβ‖² + λ‖β‖₁`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::steplm::selection_target;
use crate::datagen::Dataset;
use crate::error::{config, Error, Result};
use crate::linalg;
use crate::projpred::kfold_assignment;
use crate::refmodel::ReferenceFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub n_lambda: usize,
    /// Smallest λ as a fraction of λ_max; `None` picks 0.01 when n < p and
    /// 1e-4 otherwise.
    pub lambda_min_ratio: Option<f64>,
    pub k_folds: usize,
    /// A sweep has converged when every `‖z_j‖²/n · Δβ_j²` is below
    /// `tol` times the variance of the target.
    pub tol: f64,
    pub max_sweeps: usize,
    pub use_reference: bool,
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_lambda: 100,
            lambda_min_ratio: None,
            k_folds: 10,
            tol: 1e-14,
            max_sweeps: 100_000,
            use_reference: false,
            seed: 0,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambda == 0 {
            return Err(config("n_lambda must be positive"));
        }
        if let Some(r) = self.lambda_min_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(config(format!("lambda_min_ratio = {r} must lie in (0, 1)")));
            }
        }
        if !(self.tol > 0.0) || self.max_sweeps == 0 {
            return Err(config("tol and max_sweeps must be positive"));
        }
        Ok(())
    }
}

/// Standardized design and centered target with the statistics needed to
/// map coefficients back.
struct Standardized {
    z: DMatrix<f64>,
    yc: DVector<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
    y_mean: f64,
    /// `‖z_j‖²/n`: 1, or 0 for constant columns.
    colsq: Vec<f64>,
}

impl Standardized {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (center, scale) = linalg::column_moments(x);
        let z = linalg::standardize_with(x, &center, &scale);
        let n = x.nrows() as f64;
        let colsq = z.column_iter().map(|c| c.norm_squared() / n).collect();
        let y_mean = y.mean();
        Standardized {
            z,
            yc: y.add_scalar(-y_mean),
            center,
            scale,
            y_mean,
            colsq,
        }
    }

    /// (intercept, coefficients) on the original scale.
    fn original(&self, beta: &DVector<f64>) -> (f64, DVector<f64>) {
        let b = DVector::from_fn(beta.len(), |j, _| {
            if self.scale[j] > 0.0 {
                beta[j] / self.scale[j]
            } else {
                0.0
            }
        });
        let shift: f64 = (0..b.len()).map(|j| b[j] * self.center[j]).sum();
        (self.y_mean - shift, b)
    }
}

/// `max_j |z_jᵀ y| / n`: the smallest λ with an all-zero solution.
pub fn lambda_max(z: &DMatrix<f64>, yc: &DVector<f64>) -> f64 {
    let n = z.nrows() as f64;
    (z.transpose() * yc).amax() / n
}

fn soft(u: f64, lambda: f64) -> f64 {
    // Rounding in the inner products must not push λ_max off zero.
    if u.abs() <= lambda * (1.0 + 1e-12) {
        0.0
    } else {
        u - lambda * u.signum()
    }
}

/// Coordinate descent at one λ, warm-started from `beta` with matching
/// residual `resid`. Alternates full sweeps with sweeps over the active set.
#[allow(clippy::too_many_arguments)]
fn descend(
    z: &DMatrix<f64>,
    colsq: &[f64],
    lambda: f64,
    beta: &mut DVector<f64>,
    resid: &mut DVector<f64>,
    tol: f64,
    scale: f64,
    max_sweeps: usize,
    lambda_index: usize,
) -> Result<()> {
    let n = z.nrows() as f64;
    let p = z.ncols();
    let mut sweeps = 0;
    let tol = tol * scale;
    let sweep = |cols: &mut dyn Iterator<Item = usize>, beta: &mut DVector<f64>, resid: &mut DVector<f64>| {
        let mut max_change: f64 = 0.0;
        for j in cols {
            if colsq[j] == 0.0 {
                continue;
            }
            let zj = z.column(j);
            let old = beta[j];
            let u = zj.dot(resid) / n + colsq[j] * old;
            let new = soft(u, lambda) / colsq[j];
            if new != old {
                resid.axpy(old - new, &zj, 1.0);
                beta[j] = new;
                max_change = max_change.max(colsq[j] * (new - old).powi(2));
            }
        }
        max_change
    };
    loop {
        sweeps += 1;
        if sweeps > max_sweeps {
            return Err(Error::LassoNonConvergence { lambda_index });
        }
        if sweep(&mut (0..p), beta, resid) < tol {
            return Ok(());
        }
        let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        loop {
            sweeps += 1;
            if sweeps > max_sweeps {
                return Err(Error::LassoNonConvergence { lambda_index });
            }
            if sweep(&mut active.iter().copied(), beta, resid) < tol {
                break;
            }
        }
    }
}

/// Fraction of variance explained at which the path stops, as in glmnet.
const MAX_EXPLAINED: f64 = 0.999;

/// Coefficients (standardized scale) along `lambdas`, one row per λ. The
/// path ends early once the fit explains `MAX_EXPLAINED` of the variance, or
/// when descent fails to converge after the first λ; the returned matrix
/// then has fewer rows than `lambdas`.
fn path_std(s: &Standardized, lambdas: &[f64], tol: f64, max_sweeps: usize) -> Result<DMatrix<f64>> {
    let p = s.z.ncols();
    let mut beta = DVector::zeros(p);
    let mut resid = s.yc.clone();
    let mut out = DMatrix::zeros(lambdas.len(), p);
    let tss = s.yc.norm_squared();
    let var = tss / s.z.nrows() as f64;
    let scale = if var > 0.0 { var } else { 1.0 };
    for (l, &lambda) in lambdas.iter().enumerate() {
        match descend(&s.z, &s.colsq, lambda, &mut beta, &mut resid, tol, scale, max_sweeps, l) {
            Ok(()) => {}
            Err(e) if l == 0 => return Err(e),
            Err(e) => {
                log::warn!("{e}; path truncated to {l} values");
                return Ok(out.rows(0, l).into_owned());
            }
        }
        out.set_row(l, &beta.transpose());
        if tss > 0.0 && 1.0 - resid.norm_squared() / tss >= MAX_EXPLAINED {
            return Ok(out.rows(0, l + 1).into_owned());
        }
    }
    Ok(out)
}

/// Largest violation of the lasso optimality conditions for `beta` on the
/// standardized problem: `|g_j| ≤ λ` for zero coefficients and
/// `g_j = λ·sign(β_j)` otherwise, with `g = Zᵀ(y - Zβ)/n`.
pub fn kkt_violation(z: &DMatrix<f64>, yc: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let n = z.nrows() as f64;
    let g = z.transpose() * (yc - z * beta) / n;
    (0..beta.len())
        .map(|j| {
            if beta[j] == 0.0 {
                (g[j].abs() - lambda).max(0.0)
            } else {
                (g[j] - lambda * beta[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    /// Decreasing penalty grid; may stop short of `n_lambda` values when the
    /// path saturates or descent stalls near interpolation.
    pub lambdas: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// One row per λ, original scale.
    pub coef_path: DMatrix<f64>,
    /// Mean held-out squared error per λ and its standard error.
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub min_index: usize,
    /// Largest λ within one standard error of the minimum.
    pub chosen_index: usize,
    pub active: Vec<usize>,
}

impl LassoFit {
    pub fn chosen_lambda(&self) -> f64 {
        self.lambdas[self.chosen_index]
    }

    pub fn predict(&self, x_new: &DMatrix<f64>) -> DVector<f64> {
        let b = self.coef_path.row(self.chosen_index).transpose();
        (x_new * b).add_scalar(self.intercepts[self.chosen_index])
    }
}

fn lambda_grid(lmax: f64, n: usize, p: usize, cfg: &LassoConfig) -> Vec<f64> {
    let ratio = cfg
        .lambda_min_ratio
        .unwrap_or(if n < p { 1e-2 } else { 1e-4 });
    let m = cfg.n_lambda;
    if m == 1 {
        return vec![lmax];
    }
    (0..m)
        .map(|l| lmax * ratio.powf(l as f64 / (m - 1) as f64))
        .collect()
}

/// Lasso path on `x`, `y` with the penalty chosen by K-fold CV and the
/// one-standard-error rule.
pub fn lasso_cv_xy(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &LassoConfig) -> Result<LassoFit> {
    cfg.validate()?;
    let (n, p) = x.shape();
    let full = Standardized::new(x, y);
    let lmax = lambda_max(&full.z, &full.yc);
    if lmax == 0.0 {
        // Constant target or constant design: nothing to select.
        return Ok(LassoFit {
            lambdas: vec![0.0],
            intercepts: vec![full.y_mean],
            coef_path: DMatrix::zeros(1, p),
            cv_mean: vec![0.0],
            cv_se: vec![0.0],
            min_index: 0,
            chosen_index: 0,
            active: Vec::new(),
        });
    }
    let mut lambdas = lambda_grid(lmax, n, p, cfg);
    let std_path = path_std(&full, &lambdas, cfg.tol, cfg.max_sweeps)?;
    lambdas.truncate(std_path.nrows());

    let assignment = kfold_assignment(n, cfg.k_folds, cfg.seed)?;
    let fold_paths = (0..cfg.k_folds)
        .into_par_iter()
        .map(|fold| -> Result<(Standardized, DMatrix<f64>)> {
            let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
            let s = Standardized::new(&linalg::rows(x, &train), &linalg::select(y, &train));
            let path = path_std(&s, &lambdas, cfg.tol, cfg.max_sweeps)?;
            Ok((s, path))
        })
        .collect::<Result<Vec<_>>>()?;
    // Every fold must cover the same λ values as the full-data path.
    let m = fold_paths.iter().map(|(_, path)| path.nrows()).fold(lambdas.len(), usize::min);
    lambdas.truncate(m);
    let fold_mse: Vec<Vec<f64>> = fold_paths
        .iter()
        .enumerate()
        .map(|(fold, (s, path))| {
            let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
            let xt = linalg::rows(x, &test);
            let yt = linalg::select(y, &test);
            (0..m)
                .map(|l| {
                    let (a, b) = s.original(&path.row(l).transpose());
                    let pred = (&xt * b).add_scalar(a);
                    (pred - &yt).norm_squared() / test.len() as f64
                })
                .collect()
        })
        .collect();

    let mut intercepts = Vec::with_capacity(lambdas.len());
    let mut coef_path = DMatrix::zeros(lambdas.len(), p);
    for l in 0..lambdas.len() {
        let (a, b) = full.original(&std_path.row(l).transpose());
        intercepts.push(a);
        coef_path.set_row(l, &b.transpose());
    }

    let k = cfg.k_folds as f64;
    let (cv_mean, cv_se): (Vec<f64>, Vec<f64>) = (0..lambdas.len())
        .map(|l| {
            let v: Vec<f64> = fold_mse.iter().map(|f| f[l]).collect();
            (crate::stats::mean(&v), crate::stats::sd(&v) / k.sqrt())
        })
        .unzip();
    let min_index = (0..lambdas.len())
        .min_by(|&a, &b| cv_mean[a].total_cmp(&cv_mean[b]))
        .unwrap();
    let bound = cv_mean[min_index] + cv_se[min_index];
    let chosen_index = (0..=min_index).find(|&l| cv_mean[l] <= bound).unwrap();
    let active = (0..p).filter(|&j| coef_path[(chosen_index, j)] != 0.0).collect();
    Ok(LassoFit {
        lambdas,
        intercepts,
        coef_path,
        cv_mean,
        cv_se,
        min_index,
        chosen_index,
        active,
    })
}

/// [`lasso_cv_xy`] on a dataset, fitting the reference's predictive means
/// instead of `y` when `cfg.use_reference` is set.
pub fn lasso_cv(d: &Dataset, cfg: &LassoConfig, reference: Option<&ReferenceFit>) -> Result<LassoFit> {
    let target = selection_target(d, cfg.use_reference, reference)?;
    lasso_cv_xy(&d.x, &target, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::OrderedQr;
    use crate::rng;
    use crate::stats::std_normal;

    fn problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut r = rng::stream(seed, 0);
        let x = DMatrix::from_fn(n, p, |_, _| std_normal(&mut r));
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] - x[(i, 1)] + std_normal(&mut r));
        (x, y)
    }

    #[test]
    fn above_lambda_max_everything_is_zero() {
        let (x, y) = problem(40, 10, 1);
        let s = Standardized::new(&x, &y);
        let lmax = lambda_max(&s.z, &s.yc);
        let path = path_std(&s, &[lmax * 1.5, lmax], 1e-12, 1000).unwrap();
        assert!(path.iter().all(|&v| v == 0.0));
        let below = path_std(&s, &[lmax * 0.99], 1e-12, 1000).unwrap();
        assert!(below.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn orthogonal_design_is_soft_thresholding() {
        let n = 30;
        let mut r = rng::stream(2, 0);
        // Centered orthogonal columns with ‖z_j‖² = n, so standardization is
        // the identity.
        let mut a = DMatrix::from_fn(n, 4, |_, _| std_normal(&mut r));
        a = a.insert_column(0, 1.0);
        let q = OrderedQr::new(&a).q.columns(1, 4).into_owned() * (n as f64).sqrt();
        let y = DVector::from_fn(n, |_, _| 3.0 * std_normal(&mut r));
        let s = Standardized::new(&q, &y);
        assert!((&s.z - &q).amax() < 1e-10);
        let lambda = 0.4;
        let path = path_std(&s, &[lambda], 1e-14, 1000).unwrap();
        let g = q.transpose() * &s.yc / n as f64;
        for j in 0..4 {
            assert!((path[(0, j)] - soft(g[j], lambda)).abs() < 1e-10);
        }
    }

    #[test]
    fn kkt_holds_along_the_path() {
        let (x, y) = problem(50, 80, 3);
        let s = Standardized::new(&x, &y);
        let lmax = lambda_max(&s.z, &s.yc);
        let grid = lambda_grid(lmax, 50, 80, &LassoConfig::default());
        let cfg = LassoConfig::default();
        let path = path_std(&s, &grid, cfg.tol, cfg.max_sweeps).unwrap();
        assert!(path.nrows() > grid.len() / 2, "path stopped at {}", path.nrows());
        for (l, &lambda) in grid.iter().take(path.nrows()).enumerate() {
            let b = path.row(l).transpose();
            let v = kkt_violation(&s.z, &s.yc, &b, lambda);
            assert!(v <= 1e-6, "λ index {l}: {v}");
        }
    }

    #[test]
    fn path_moves_in_small_steps() {
        let (x, y) = problem(60, 20, 4);
        let s = Standardized::new(&x, &y);
        let lmax = lambda_max(&s.z, &s.yc);
        let coarse = lambda_grid(lmax, 60, 20, &LassoConfig { n_lambda: 50, ..LassoConfig::default() });
        let fine = lambda_grid(lmax, 60, 20, &LassoConfig { n_lambda: 400, ..LassoConfig::default() });
        let jump = |grid: &[f64]| {
            let p = path_std(&s, grid, 1e-12, 100_000).unwrap();
            (1..grid.len())
                .map(|l| (p.row(l) - p.row(l - 1)).amax())
                .fold(0.0, f64::max)
        };
        assert!(jump(&fine) < jump(&coarse));
    }

    #[test]
    fn cross_validation_finds_the_signal() {
        let (x, y) = problem(100, 20, 5);
        let fit = lasso_cv_xy(&x, &y, &LassoConfig::default()).unwrap();
        assert!(fit.active.contains(&0) && fit.active.contains(&1));
        assert!(fit.chosen_index <= fit.min_index);
        let pred = fit.predict(&x);
        assert!((pred - &y).norm_squared() / 100.0 < 2.0);
    }

    #[test]
    fn null_data_selects_little() {
        let mut total = 0;
        for rep in 0..10 {
            let mut r = rng::stream(100 + rep, 0);
            let x = DMatrix::from_fn(60, 30, |_, _| std_normal(&mut r));
            let y = DVector::from_fn(60, |_, _| std_normal(&mut r));
            let cfg = LassoConfig {
                seed: rep,
                ..LassoConfig::default()
            };
            total += lasso_cv_xy(&x, &y, &cfg).unwrap().active.len();
        }
        assert!(total as f64 / 10.0 <= 2.0, "{total}");
    }

    #[test]
    fn constant_target_selects_nothing() {
        let (x, _) = problem(20, 5, 6);
        let fit = lasso_cv_xy(&x, &DVector::from_element(20, 1.0), &LassoConfig::default()).unwrap();
        assert!(fit.active.is_empty());
    }
}
