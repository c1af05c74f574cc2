//! Gibbs sampler for the supervised-principal-components reference model:
//!
//! ```text
//! y_i | β, σ   ~ N(α + u_iᵀβ, σ²)
//! β_j | τ      ~ N(0, τ²)
//! τ            ~ t⁺_ν_τ(0, A_τ)
//! σ            ~ t⁺_ν_σ(0, A_σ)
//! ```
//!
//! with a flat prior on the intercept α. Each half-t is written as
//! `x² | a ~ IG(ν/2, ν/a)`, `a ~ IG(1/2, 1/A²)`.

use nalgebra::{DMatrix, DVector};

use super::{Basis, McmcConfig, PriorConfig, ReferenceFit, SpcBasis};
use crate::error::{Error, Result};
use crate::linalg::sample_from_precision;
use crate::rng;
use crate::stats::{inv_gamma, std_normal};

pub(super) fn check_inputs(y: &DVector<f64>, mcmc: &McmcConfig) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("target contains non-finite values".into()));
    }
    if mcmc.draws < 100 {
        return Err(Error::Config(format!(
            "at least 100 posterior draws required, got {}",
            mcmc.draws
        )));
    }
    Ok(())
}

pub(super) fn diverged(iteration: usize, what: &str) -> Error {
    Error::SamplerDiverged {
        iteration,
        what: what.to_string(),
    }
}

/// Draws stored by a sampler run.
pub(super) struct Trace {
    pub intercepts: Vec<f64>,
    pub betas: Vec<DVector<f64>>,
    pub sigmas: Vec<f64>,
}

impl Trace {
    pub fn with_capacity(n: usize) -> Self {
        Trace {
            intercepts: Vec::with_capacity(n),
            betas: Vec::with_capacity(n),
            sigmas: Vec::with_capacity(n),
        }
    }

    pub fn into_fit(self, basis: Basis, u: &DMatrix<f64>) -> Result<ReferenceFit> {
        let c = u.ncols();
        let s = self.sigmas.len();
        let mut beta = DMatrix::zeros(s, c);
        for (i, b) in self.betas.iter().enumerate() {
            beta.set_row(i, &b.transpose());
        }
        let mut mean_draws = &beta * u.transpose();
        for (i, mut row) in mean_draws.row_iter_mut().enumerate() {
            row.add_scalar_mut(self.intercepts[i]);
        }
        let yhat = mean_draws.row_mean().transpose();
        Ok(ReferenceFit {
            basis,
            intercept_draws: self.intercepts,
            beta_draws: beta,
            sigma_draws: self.sigmas,
            mean_draws,
            yhat,
        })
    }
}

/// Posterior sampling for the regression of `y` on the components of `basis`.
pub fn fit_spc_reference(
    basis: SpcBasis,
    y: &DVector<f64>,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
) -> Result<ReferenceFit> {
    prior.validate()?;
    check_inputs(y, mcmc)?;
    let u = basis.scores.clone();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("component scores contain non-finite values".into()));
    }
    if u.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} score rows for {} targets",
            u.nrows(),
            y.len()
        )));
    }
    let tau_scale = prior.tau_scale_for(basis.s_max);
    let trace = sample_normal_hierarchy(&u, y, prior, tau_scale, mcmc)?;
    trace.into_fit(Basis::Spc(basis), &u)
}

/// Shared sampler for `y ~ N(α + Uβ, σ²)`, `β_j ~ N(0, τ²)`.
pub(super) fn sample_normal_hierarchy(
    u: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorConfig,
    tau_scale: f64,
    mcmc: &McmcConfig,
) -> Result<Trace> {
    let (n, c) = u.shape();
    let nf = n as f64;
    let mut rng = rng::stream(mcmc.seed, 0x5bc);
    let utu = u.transpose() * u;

    let y_mean = y.mean();
    let y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / nf).sqrt();
    let mut alpha = y_mean;
    let mut tau2 = prior.fixed_tau.unwrap_or(tau_scale).powi(2);
    let mut sigma2 = prior
        .fixed_sigma
        .unwrap_or(if y_sd > 0.0 { y_sd } else { 1.0 })
        .powi(2);
    // With an exactly fitted target the σ posterior is improper at 0.
    let sigma2_floor = 1e-10 * if y_sd > 0.0 { y_sd * y_sd } else { 1.0 };
    let mut a_tau = tau_scale * tau_scale;
    let mut a_sigma = prior.sigma_scale * prior.sigma_scale;

    let kept = mcmc.kept_iterations();
    let mut next_keep = 0;
    let mut trace = Trace::with_capacity(kept.len());
    let total = mcmc.warmup + mcmc.draws;
    for it in 0..total {
        // β | α, τ, σ
        let mut precision = &utu / sigma2;
        for j in 0..c {
            precision[(j, j)] += 1.0 / tau2;
        }
        let rhs = u.transpose() * y.add_scalar(-alpha) / sigma2;
        let beta = sample_from_precision(&mut rng, precision, &rhs)
            .map_err(|_| diverged(it, "coefficient precision not positive definite"))?;

        // α | β, σ
        let fitted = u * &beta;
        let resid_mean = (y - &fitted).mean();
        alpha = resid_mean + (sigma2 / nf).sqrt() * std_normal(&mut rng);

        // τ² and its mixing variable
        if prior.fixed_tau.is_none() {
            let nu = prior.tau_df;
            tau2 = inv_gamma(
                &mut rng,
                0.5 * (nu + c as f64),
                nu / a_tau + 0.5 * beta.norm_squared(),
            );
            a_tau = inv_gamma(
                &mut rng,
                0.5 * (nu + 1.0),
                nu / tau2 + 1.0 / (tau_scale * tau_scale),
            );
        }

        // σ² and its mixing variable
        if prior.fixed_sigma.is_none() {
            let nu = prior.sigma_df;
            let rss = (y - &fitted).add_scalar(-alpha).norm_squared();
            sigma2 = inv_gamma(&mut rng, 0.5 * (nf + nu), 0.5 * rss + nu / a_sigma)
                .max(sigma2_floor);
            a_sigma = inv_gamma(
                &mut rng,
                0.5 * (nu + 1.0),
                nu / sigma2 + 1.0 / (prior.sigma_scale * prior.sigma_scale),
            );
        }

        if !(alpha.is_finite() && tau2.is_finite() && sigma2.is_finite() && sigma2 > 0.0)
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
    Ok(trace)
}
