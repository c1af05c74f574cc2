//! Regularised-horseshoe linear regression on standardized predictors.
//!
//! The prior on each coefficient is the product of a horseshoe component and a
//! finite Gaussian slab, `β_j ∝ N(0, τ²λ_j²) · N(0, c²)`, so the effective
//! prior variance is `(1/c² + 1/(τ²λ_j²))⁻¹`: small coefficients are shrunk by
//! the horseshoe, large ones are regularised by the slab. Local and global
//! half-Cauchy scales use the inverse-gamma auxiliary representation.

use nalgebra::{DMatrix, DVector};

use super::gibbs::{check_inputs, diverged, Trace};
use super::{Basis, McmcConfig, PriorConfig, ReferenceFit};
use crate::error::{Error, Result};
use crate::linalg::{self, sample_from_precision, sample_from_precision_with};
use crate::rng;
use crate::stats::{inv_gamma, std_normal};

const MIN_PRIOR_VAR: f64 = 1e-20;

/// Global scale `p0 / (p - p0) · σ / √n`, with the sample sd of `y` standing
/// in for σ.
pub(crate) fn global_scale(prior: &PriorConfig, n: usize, p: usize, y_sd: f64) -> f64 {
    if let Some(g) = prior.global_scale {
        return g;
    }
    if p == 0 {
        return 1.0;
    }
    let (nf, pf) = (n as f64, p as f64);
    let p0 = prior
        .expected_nonzero
        .unwrap_or_else(|| (pf / 10.0).min(nf / 5.0))
        .clamp(f64::MIN_POSITIVE, pf * (1.0 - 1e-9));
    let sigma = if y_sd > 0.0 { y_sd } else { 1.0 };
    p0 / (pf - p0) * sigma / nf.sqrt()
}

pub fn fit_rhs_regression(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
) -> Result<ReferenceFit> {
    fit_rhs(x, y, prior, mcmc, None)
}

/// As [`fit_rhs_regression`], but the coefficient noise and local scales of
/// column `j` come from a stream keyed by `column_keys[j]`. Fits on
/// overlapping column sets with the same seed and keys then share random
/// numbers on the common columns, which makes their difference far less noisy.
pub fn fit_rhs_regression_keyed(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
    column_keys: &[u64],
) -> Result<ReferenceFit> {
    if column_keys.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "{} column keys for {} columns",
            column_keys.len(),
            x.ncols()
        )));
    }
    fit_rhs(x, y, prior, mcmc, Some(column_keys))
}

fn fit_rhs(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
    column_keys: Option<&[u64]>,
) -> Result<ReferenceFit> {
    prior.validate()?;
    check_inputs(y, mcmc)?;
    let (n, p) = x.shape();
    if n < 3 {
        return Err(Error::Input(format!("horseshoe regression needs n >= 3, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, y has {}", y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("design contains non-finite values".into()));
    }
    let (center, scale) = linalg::column_moments(x);
    let z = linalg::standardize_with(x, &center, &scale);
    let nf = n as f64;
    let y_mean = y.mean();
    let y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / nf).sqrt();
    let tau0 = global_scale(prior, n, p, y_sd);
    let slab_prec = 1.0 / (prior.slab_scale * prior.slab_scale);

    let mut rng = rng::stream(mcmc.seed, 0x45);
    let mut column_rngs: Option<Vec<rng::StreamRng>> =
        column_keys.map(|keys| keys.iter().map(|&k| rng::stream(rng::derive(mcmc.seed, k), 0x46)).collect());
    let ztz = z.transpose() * &z;
    let zty = z.transpose() * y;

    let mut alpha = y_mean;
    let mut lambda2 = vec![1.0; p];
    let mut nu = vec![1.0; p];
    let mut tau2 = tau0 * tau0;
    let mut xi = 1.0;
    let mut sigma2 = prior
        .fixed_sigma
        .unwrap_or(if y_sd > 0.0 { y_sd } else { 1.0 })
        .powi(2);
    let mut a_sigma = prior.sigma_scale * prior.sigma_scale;
    let sigma2_floor = 1e-10 * if y_sd > 0.0 { y_sd * y_sd } else { 1.0 };

    let kept = mcmc.kept_iterations();
    let mut next_keep = 0;
    let mut trace = Trace::with_capacity(kept.len());
    for it in 0..mcmc.warmup + mcmc.draws {
        // β | rest
        let mut precision = &ztz / sigma2;
        for j in 0..p {
            let hs_var = (tau2 * lambda2[j]).max(MIN_PRIOR_VAR);
            precision[(j, j)] += slab_prec + 1.0 / hs_var;
        }
        let rhs = (&zty - z.transpose() * DVector::from_element(n, alpha)) / sigma2;
        let beta = match column_rngs.as_mut() {
            Some(rs) => {
                let z = DVector::from_iterator(p, rs.iter_mut().map(|r| std_normal(r)));
                sample_from_precision_with(precision, &rhs, &z)
            }
            None => sample_from_precision(&mut rng, precision, &rhs),
        }
        .map_err(|_| diverged(it, "coefficient precision not positive definite"))?;

        let fitted = &z * &beta;
        alpha = (y - &fitted).mean() + (sigma2 / nf).sqrt() * std_normal(&mut rng);

        // Local scales.
        for j in 0..p {
            let r = match column_rngs.as_mut() {
                Some(rs) => &mut rs[j],
                None => &mut rng,
            };
            let b2 = beta[j] * beta[j];
            lambda2[j] = inv_gamma(r, 1.0, 1.0 / nu[j] + b2 / (2.0 * tau2)).max(1e-30);
            nu[j] = inv_gamma(r, 1.0, 1.0 + 1.0 / lambda2[j]);
        }

        // Global scale.
        if let Some(t) = prior.fixed_tau {
            tau2 = t * t;
        } else {
            let ss: f64 = (0..p).map(|j| beta[j] * beta[j] / lambda2[j]).sum();
            tau2 = inv_gamma(&mut rng, 0.5 * (p as f64 + 1.0), 1.0 / xi + 0.5 * ss).max(1e-30);
            xi = inv_gamma(&mut rng, 1.0, 1.0 / (tau0 * tau0) + 1.0 / tau2);
        }

        if prior.fixed_sigma.is_none() {
            let dfs = prior.sigma_df;
            let rss = (y - &fitted).add_scalar(-alpha).norm_squared();
            sigma2 = inv_gamma(&mut rng, 0.5 * (nf + dfs), 0.5 * rss + dfs / a_sigma)
                .max(sigma2_floor);
            a_sigma = inv_gamma(
                &mut rng,
                0.5 * (dfs + 1.0),
                dfs / sigma2 + 1.0 / (prior.sigma_scale * prior.sigma_scale),
            );
        }

        if !(alpha.is_finite() && sigma2.is_finite() && sigma2 > 0.0 && tau2.is_finite())
            || beta.iter().any(|v| !v.is_finite())
        {
            return Err(diverged(it, "non-finite parameter"));
        }

        if it >= mcmc.warmup && next_keep < kept.len() && it - mcmc.warmup == kept[next_keep] {
            trace.intercepts.push(alpha);
            trace.betas.push(beta.clone());
            trace.sigmas.push(sigma2.sqrt());
            next_keep += 1;
        }
    }
    trace.into_fit(Basis::Standardized { center, scale }, &z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::quantile;

    fn noise_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 9);
        DMatrix::from_fn(n, p, |_, _| std_normal(&mut r))
    }

    fn interval(col: &[f64]) -> (f64, f64) {
        let mut v = col.to_vec();
        v.sort_by(f64::total_cmp);
        (quantile(&v, 0.05), quantile(&v, 0.95))
    }

    fn quick() -> McmcConfig {
        McmcConfig {
            warmup: 400,
            draws: 600,
            keep: 600,
            seed: 1,
        }
    }

    #[test]
    fn strong_signal_interval_excludes_zero() {
        let x = noise_design(60, 8, 1);
        let mut r = rng::stream(2, 0);
        let y = DVector::from_fn(60, |i, _| 4.0 * x[(i, 2)] + std_normal(&mut r));
        let fit = fit_rhs_regression(&x, &y, &PriorConfig::default(), &quick()).unwrap();
        let col: Vec<f64> = fit.beta_draws.column(2).iter().copied().collect();
        let (lo, hi) = interval(&col);
        assert!(lo > 0.0 && hi > lo);
    }

    #[test]
    fn null_intervals_rarely_exclude_zero() {
        let mut excluded = 0;
        let mut total = 0;
        for rep in 0..5 {
            let x = noise_design(80, 50, 10 + rep);
            let mut r = rng::stream(20 + rep, 0);
            let y = DVector::from_fn(80, |_, _| std_normal(&mut r));
            let mcmc = McmcConfig {
                seed: rep,
                ..quick()
            };
            let fit = fit_rhs_regression(&x, &y, &PriorConfig::default(), &mcmc).unwrap();
            for j in 0..50 {
                let col: Vec<f64> = fit.beta_draws.column(j).iter().copied().collect();
                let (lo, hi) = interval(&col);
                if lo > 0.0 || hi < 0.0 {
                    excluded += 1;
                }
                total += 1;
            }
        }
        assert!((excluded as f64) / (total as f64) <= 0.1, "{excluded}/{total}");
    }

    #[test]
    fn single_predictor_shrinks_toward_zero() {
        let x = noise_design(40, 1, 3);
        let mut r = rng::stream(4, 0);
        let y = DVector::from_fn(40, |i, _| 0.4 * x[(i, 0)] + std_normal(&mut r));
        let fit = fit_rhs_regression(&x, &y, &PriorConfig::default(), &quick()).unwrap();
        // OLS slope on the standardized predictor.
        let (c, s) = linalg::column_moments(&x);
        let z = linalg::standardize_with(&x, &c, &s);
        let zc = z.column(0);
        let yc = y.add_scalar(-y.mean());
        let ols = zc.dot(&yc) / zc.dot(&zc);
        let post = fit.beta_draws.column(0).mean();
        assert!(post * ols >= 0.0);
        assert!(post.abs() <= ols.abs());
    }

    #[test]
    fn global_scale_heuristic() {
        let g = global_scale(&PriorConfig::default(), 100, 50, 2.0);
        // p0 = min(5, 20) = 5 → 5/45 · 2/10
        assert!((g - 5.0 / 45.0 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn requires_three_rows() {
        let x = noise_design(2, 2, 1);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(fit_rhs_regression(&x, &y, &PriorConfig::default(), &quick()).is_err());
    }

    #[test]
    fn keyed_fits_share_noise_on_common_columns() {
        let x = noise_design(60, 6, 4);
        let mut r = rng::stream(5, 0);
        let y = DVector::from_fn(60, |i, _| 2.0 * x[(i, 0)] + std_normal(&mut r));
        let prior = PriorConfig::default();
        let sub = linalg::columns(&x, &[0, 1, 2, 3, 4]);
        let coef0 = |fit: &ReferenceFit| fit.beta_draws.column(0).iter().copied().collect::<Vec<f64>>();
        let full = fit_rhs_regression_keyed(&x, &y, &prior, &quick(), &[0, 1, 2, 3, 4, 5]).unwrap();
        let keyed = fit_rhs_regression_keyed(&sub, &y, &prior, &quick(), &[0, 1, 2, 3, 4]).unwrap();
        let plain = fit_rhs_regression(&sub, &y, &prior, &quick()).unwrap();
        let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>();
        assert!(gap(&coef0(&full), &coef0(&keyed)) < 0.5 * gap(&coef0(&full), &coef0(&plain)));
        assert!(fit_rhs_regression_keyed(&x, &y, &prior, &quick(), &[0, 1]).is_err());
    }
}
