//! Draw-by-draw KL projection onto Gaussian linear submodels.
//!
//! For a reference draw with predictive means `f` and scale `σ`, the
//! projected submodel minimizes `Σ_i KL[N(f_i, σ²) ‖ N(x_iᵀβ, σ⊥²)]`. The
//! minimizer is the least-squares fit of `f` on the submodel design, with
//! `σ⊥² = σ² + RSS/n`, and the attained divergence is `n · log(σ⊥/σ)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, OrderedQr};
use crate::refmodel::ReferenceFit;

/// Projection of a single draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawProjection {
    /// Intercept followed by one coefficient per submodel column. Columns
    /// dropped as linearly dependent get a zero coefficient.
    pub beta: DVector<f64>,
    pub sigma: f64,
    pub kl: f64,
    /// Submodel columns (0-based, excluding the intercept) that were dropped.
    pub dropped: Vec<usize>,
}

/// Projection of every retained reference draw onto one submodel.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmodelProjection {
    /// Variable indices into the full design, in submodel order.
    pub idx: Vec<usize>,
    /// S × (|idx| + 1); column 0 is the intercept.
    pub beta_draws: DMatrix<f64>,
    pub sigma_draws: Vec<f64>,
    pub kl_draws: Vec<f64>,
    /// Entries of `idx` dropped as linearly dependent.
    pub dropped: Vec<usize>,
}

impl SubmodelProjection {
    pub fn mean_kl(&self) -> f64 {
        crate::stats::mean(&self.kl_draws)
    }

    /// S × m per-draw predictive means at new rows of the full design.
    pub fn mean_draws_for(&self, x_new: &DMatrix<f64>) -> DMatrix<f64> {
        let design = linalg::with_intercept(&linalg::columns(x_new, &self.idx));
        &self.beta_draws * design.transpose()
    }
}

fn full_beta(qr: &OrderedQr, coef: &DMatrix<f64>, width: usize) -> DMatrix<f64> {
    // coef is rank × S for the kept columns; expand to width × S.
    let mut out = DMatrix::zeros(width, coef.ncols());
    for (r, &col) in qr.kept.iter().enumerate() {
        out.set_row(col, &coef.row(r));
    }
    out
}

/// Project one draw `(f, sigma)` onto `[1, x_sub]`.
pub fn project_draw(f: &DVector<f64>, sigma: f64, x_sub: &DMatrix<f64>) -> Result<DrawProjection> {
    let n = f.len();
    if x_sub.nrows() != n {
        return Err(Error::Dimension(format!(
            "submodel design has {} rows, draw has {n}",
            x_sub.nrows()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Input("reference sigma must be positive".into()));
    }
    let design = linalg::with_intercept(x_sub);
    let qr = OrderedQr::new(&design);
    let fm = DMatrix::from_column_slice(n, 1, f.as_slice());
    let coef = qr.solve(&fm);
    let rss = qr.residuals(&fm).norm_squared();
    let sigma_perp = (sigma * sigma + rss / n as f64).sqrt();
    let beta = full_beta(&qr, &coef, design.ncols()).column(0).into_owned();
    Ok(DrawProjection {
        beta,
        sigma: sigma_perp,
        kl: n as f64 * (sigma_perp / sigma).ln(),
        dropped: qr.dropped.iter().filter(|&&c| c > 0).map(|c| c - 1).collect(),
    })
}

/// Project the draws `draws` (all when `None`) of `reference` onto the
/// submodel using variables `idx` of `x`.
pub fn project_submodel(
    reference: &ReferenceFit,
    x: &DMatrix<f64>,
    idx: &[usize],
    draws: Option<&[usize]>,
) -> Result<SubmodelProjection> {
    let n = x.nrows();
    if reference.n_obs() != n {
        return Err(Error::Dimension(format!(
            "reference has {} training rows, design has {n}",
            reference.n_obs()
        )));
    }
    if let Some(&bad) = idx.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::Dimension(format!("variable index {bad} out of range")));
    }
    let all: Vec<usize>;
    let draws = match draws {
        Some(d) => d,
        None => {
            all = (0..reference.n_draws()).collect();
            &all
        }
    };
    let design = linalg::with_intercept(&linalg::columns(x, idx));
    let qr = OrderedQr::new(&design);
    let f = reference.mean_draws.select_rows(draws.iter()).transpose();
    let coef = qr.solve(&f);
    let resid = qr.residuals(&f);
    let nf = n as f64;
    let mut sigma_draws = Vec::with_capacity(draws.len());
    let mut kl_draws = Vec::with_capacity(draws.len());
    for (c, &s) in draws.iter().enumerate() {
        let sigma = reference.sigma_draws[s];
        let rss = resid.column(c).norm_squared();
        let sp = (sigma * sigma + rss / nf).sqrt();
        sigma_draws.push(sp);
        kl_draws.push(nf * (sp / sigma).ln());
    }
    let beta_draws = full_beta(&qr, &coef, design.ncols()).transpose();
    Ok(SubmodelProjection {
        idx: idx.to_vec(),
        beta_draws,
        sigma_draws,
        kl_draws,
        dropped: qr
            .dropped
            .iter()
            .filter(|&&c| c > 0)
            .map(|c| idx[c - 1])
            .collect(),
    })
}

/// Evenly spaced subset of `count` draws out of `total` (all when `count >= total`).
pub fn thinned_draws(total: usize, count: usize) -> Vec<usize> {
    if count == 0 || count >= total {
        return (0..total).collect();
    }
    (0..count).map(|i| i * total / count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats::std_normal;

    fn design(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 0);
        DMatrix::from_fn(n, m, |_, _| std_normal(&mut r))
    }

    /// KL between two normals by trapezoidal quadrature over ±12 sd.
    fn kl_quadrature(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
        let lo = m1 - 12.0 * s1;
        let hi = m1 + 12.0 * s1;
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let logp = |x: f64, m: f64, s: f64| {
            -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        };
        let mut acc = 0.0;
        for k in 0..=steps {
            let x = lo + k as f64 * h;
            let lp = logp(x, m1, s1);
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            acc += w * lp.exp() * (lp - logp(x, m2, s2));
        }
        acc * h
    }

    #[test]
    fn exact_span_gives_zero_divergence() {
        let x = design(20, 2, 1);
        let f = (&x * DVector::from_vec(vec![1.5, -0.5])).add_scalar(2.0);
        let p = project_draw(&f, 0.7, &x).unwrap();
        assert!(p.kl.abs() < 1e-10);
        assert!((p.sigma - 0.7).abs() < 1e-12);
        assert!((p.beta[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn intercept_only_closed_form() {
        let mut r = rng::stream(2, 0);
        let f = DVector::from_fn(30, |_, _| std_normal(&mut r));
        let empty = DMatrix::zeros(30, 0);
        let p = project_draw(&f, 1.1, &empty).unwrap();
        let mean = f.mean();
        let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0;
        assert!((p.beta[0] - mean).abs() < 1e-12);
        assert!((p.sigma.powi(2) - (1.21 + var)).abs() < 1e-12);
    }

    #[test]
    fn divergence_matches_quadrature() {
        let n = 15;
        let x = design(n, 3, 3);
        let mut r = rng::stream(4, 0);
        let f = DVector::from_fn(n, |_, _| 2.0 * std_normal(&mut r));
        let sigma = 0.8;
        let p = project_draw(&f, sigma, &x).unwrap();
        let fitted = linalg::with_intercept(&x) * &p.beta;
        let quad: f64 = (0..n)
            .map(|i| kl_quadrature(f[i], sigma, fitted[i], p.sigma))
            .sum();
        assert!((quad - p.kl).abs() < 1e-6, "{quad} vs {}", p.kl);
    }

    #[test]
    fn perturbing_coefficients_never_lowers_divergence() {
        let n = 25;
        let x = design(n, 3, 5);
        let mut r = rng::stream(6, 0);
        let f = DVector::from_fn(n, |_, _| std_normal(&mut r));
        let sigma = 0.5;
        let p = project_draw(&f, sigma, &x).unwrap();
        let xa = linalg::with_intercept(&x);
        let kl_at = |beta: &DVector<f64>| {
            let fitted = &xa * beta;
            let s2 = sigma * sigma + (&f - &fitted).norm_squared() / n as f64;
            // Best scale for these coefficients; KL only grows further at any
            // other scale.
            n as f64 * 0.5 * (s2 / (sigma * sigma)).ln()
        };
        for j in 0..4 {
            for d in [-1e-3, 1e-3] {
                let mut b = p.beta.clone();
                b[j] += d;
                assert!(kl_at(&b) >= p.kl - 1e-12);
            }
        }
    }

    #[test]
    fn dependent_columns_are_flagged() {
        let mut x = design(12, 2, 7);
        let dup = x.column(0).into_owned();
        x = x.insert_column(2, 0.0);
        x.set_column(2, &dup);
        let mut r = rng::stream(8, 0);
        let f = DVector::from_fn(12, |_, _| std_normal(&mut r));
        let p = project_draw(&f, 1.0, &x).unwrap();
        assert_eq!(p.dropped, vec![2]);
        assert_eq!(p.beta[3], 0.0);
    }

    #[test]
    fn thinning_is_even() {
        assert_eq!(thinned_draws(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(thinned_draws(3, 5), vec![0, 1, 2]);
    }
}
