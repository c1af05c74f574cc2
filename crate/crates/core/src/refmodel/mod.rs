//! Reference models: Bayesian linear regressions whose posterior predictive
//! distribution stands in for the noisy target during selection.
//!
//! Two models are provided:
//!
//! * a regression on supervised principal components with a half-t prior on
//!   the common coefficient scale ([`fit_spc_reference`]);
//! * a regularised-horseshoe regression on all standardized predictors
//!   ([`fit_rhs_regression`]).
//!
//! Both are fit by all-conjugate Gibbs sampling. Half-t and half-Cauchy scale
//! priors are written as inverse-gamma mixtures so every update is a direct
//! draw.

mod gibbs;
mod horseshoe;
mod spc;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::linalg;

pub use gibbs::fit_spc_reference;
pub use horseshoe::{fit_rhs_regression, fit_rhs_regression_keyed};
pub use spc::{screen_and_spc, screening_scores, SpcBasis};

/// How the scale of the half-t prior on the SPC coefficient scale is derived
/// from the standard deviation `s_max` of the leading component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauScaleRule {
    /// `s_max^-2`.
    InvSmaxSquared,
    /// `s_max^-1`.
    InvSmax,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub tau_df: f64,
    pub tau_scale: TauScaleRule,
    pub sigma_df: f64,
    pub sigma_scale: f64,
    /// Horseshoe slab scale (standardized-predictor units).
    pub slab_scale: f64,
    /// Prior guess of the number of nonzero coefficients for the horseshoe
    /// global scale; `None` uses `min(p / 10, n / 5)`.
    pub expected_nonzero: Option<f64>,
    /// Overrides the horseshoe global-scale heuristic.
    pub global_scale: Option<f64>,
    /// Hold the coefficient scale fixed instead of sampling it.
    pub fixed_tau: Option<f64>,
    /// Hold the noise scale fixed instead of sampling it.
    pub fixed_sigma: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            tau_df: 4.0,
            tau_scale: TauScaleRule::InvSmaxSquared,
            sigma_df: 3.0,
            sigma_scale: 10.0,
            slab_scale: 2.0,
            expected_nonzero: None,
            global_scale: None,
            fixed_tau: None,
            fixed_sigma: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_df < 1.0 || self.sigma_df < 1.0 {
            return Err(config("prior degrees of freedom must be at least 1"));
        }
        let positive = [self.sigma_scale, self.slab_scale];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(config("prior scales must be positive"));
        }
        if let TauScaleRule::Fixed(v) = self.tau_scale {
            if !(v > 0.0) {
                return Err(config("fixed tau scale must be positive"));
            }
        }
        for v in [self.fixed_tau, self.fixed_sigma, self.global_scale]
            .into_iter()
            .flatten()
        {
            if !(v > 0.0) {
                return Err(config("fixed scales must be positive"));
            }
        }
        Ok(())
    }

    pub(crate) fn tau_scale_for(&self, s_max: f64) -> f64 {
        match self.tau_scale {
            TauScaleRule::InvSmaxSquared => s_max.powi(-2),
            TauScaleRule::InvSmax => 1.0 / s_max,
            TauScaleRule::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub warmup: usize,
    pub draws: usize,
    /// Number of evenly spaced draws kept from `draws`.
    pub keep: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            warmup: 1000,
            draws: 1000,
            keep: 400,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        McmcConfig { seed, ..self }
    }

    /// Iterations (after warmup) whose state is stored.
    pub(crate) fn kept_iterations(&self) -> Vec<usize> {
        let keep = self.keep.clamp(1, self.draws.max(1));
        (0..keep).map(|i| i * self.draws / keep).collect()
    }
}

/// Map from raw predictor rows to the features the reference regression uses.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Spc(SpcBasis),
    /// `(x - center) / scale`, column-wise, over all predictors.
    Standardized { center: Vec<f64>, scale: Vec<f64> },
    /// The raw predictors as-is.
    Identity { n_features: usize },
}

impl Basis {
    pub fn n_inputs(&self) -> Option<usize> {
        match self {
            Basis::Spc(_) => None,
            Basis::Standardized { center, .. } => Some(center.len()),
            Basis::Identity { n_features } => Some(*n_features),
        }
    }

    pub fn features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Basis::Spc(b) => {
                if let Some(&max) = b.screened_idx.iter().max() {
                    if max >= x.ncols() {
                        return Err(Error::Dimension(format!(
                            "design has {} columns but the basis uses column {max}",
                            x.ncols()
                        )));
                    }
                }
                Ok(b.project(x))
            }
            Basis::Standardized { center, scale } => {
                check_cols(x, center.len())?;
                Ok(linalg::standardize_with(x, center, scale))
            }
            Basis::Identity { n_features } => {
                check_cols(x, *n_features)?;
                Ok(x.clone())
            }
        }
    }
}

fn check_cols(x: &DMatrix<f64>, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::Dimension(format!(
            "design has {} columns, reference expects {expected}",
            x.ncols()
        )));
    }
    Ok(())
}

/// Posterior draws of a Gaussian linear reference model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFit {
    pub basis: Basis,
    /// Length S.
    pub intercept_draws: Vec<f64>,
    /// S × c.
    pub beta_draws: DMatrix<f64>,
    /// Length S, all positive.
    pub sigma_draws: Vec<f64>,
    /// S × n predictive means on the training rows.
    pub mean_draws: DMatrix<f64>,
    /// Posterior predictive mean on the training rows.
    pub yhat: DVector<f64>,
}

impl ReferenceFit {
    /// Assemble a fit from draws, computing the predictive means on `x_train`.
    pub fn from_draws(
        basis: Basis,
        intercept_draws: Vec<f64>,
        beta_draws: DMatrix<f64>,
        sigma_draws: Vec<f64>,
        x_train: &DMatrix<f64>,
    ) -> Result<Self> {
        let s = sigma_draws.len();
        if intercept_draws.len() != s || beta_draws.nrows() != s {
            return Err(Error::Dimension("draw counts disagree".into()));
        }
        if sigma_draws.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Input("sigma draws must be positive".into()));
        }
        let u = basis.features(x_train)?;
        if u.ncols() != beta_draws.ncols() {
            return Err(Error::Dimension(format!(
                "{} features but {} coefficients",
                u.ncols(),
                beta_draws.ncols()
            )));
        }
        let mean_draws = linear_predictors(&u, &intercept_draws, &beta_draws);
        let yhat = row_mean(&mean_draws);
        Ok(ReferenceFit {
            basis,
            intercept_draws,
            beta_draws,
            sigma_draws,
            mean_draws,
            yhat,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.sigma_draws.len()
    }

    pub fn n_obs(&self) -> usize {
        self.yhat.len()
    }

    /// S × m per-draw linear predictors for new rows.
    pub fn mean_draws_for(&self, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let u = self.basis.features(x_new)?;
        Ok(linear_predictors(&u, &self.intercept_draws, &self.beta_draws))
    }

    /// Draws `idx` only (in the given order).
    pub fn thin(&self, idx: &[usize]) -> ReferenceFit {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mean_draws = self.mean_draws.select_rows(idx.iter());
        let yhat = row_mean(&mean_draws);
        ReferenceFit {
            basis: self.basis.clone(),
            intercept_draws: pick(&self.intercept_draws),
            beta_draws: self.beta_draws.select_rows(idx.iter()),
            sigma_draws: pick(&self.sigma_draws),
            mean_draws,
            yhat,
        }
    }

    /// Write every draw as `(draw, parameter, value)` rows.
    pub fn write_draws_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["draw", "parameter", "value"])?;
        for s in 0..self.n_draws() {
            let d = s.to_string();
            w.write_record([d.as_str(), "intercept", &self.intercept_draws[s].to_string()])?;
            for j in 0..self.beta_draws.ncols() {
                w.write_record([
                    d.as_str(),
                    &format!("beta[{j}]"),
                    &self.beta_draws[(s, j)].to_string(),
                ])?;
            }
            w.write_record([d.as_str(), "sigma", &self.sigma_draws[s].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn linear_predictors(u: &DMatrix<f64>, intercepts: &[f64], betas: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = betas * u.transpose();
    for (s, mut row) in m.row_iter_mut().enumerate() {
        row.add_scalar_mut(intercepts[s]);
    }
    m
}

fn row_mean(m: &DMatrix<f64>) -> DVector<f64> {
    m.row_mean().transpose()
}

/// Posterior predictive mean at new rows: the average of the per-draw linear
/// predictors.
pub fn predictive_means(fit: &ReferenceFit, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    let u = fit.basis.features(x_new)?;
    let beta_bar = fit.beta_draws.row_mean().transpose();
    let alpha_bar = crate::stats::mean(&fit.intercept_draws);
    Ok((u * beta_bar).add_scalar(alpha_bar))
}

/// Which reference model to fit, with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    Spc {
        n_components: usize,
        threshold_ratio: f64,
        #[serde(default)]
        prior: PriorConfig,
        #[serde(default)]
        mcmc: McmcConfig,
    },
    Horseshoe {
        #[serde(default)]
        prior: PriorConfig,
        #[serde(default)]
        mcmc: McmcConfig,
    },
}

impl ReferenceSpec {
    /// Five supervised components screened at 0.6 of the top correlation.
    pub fn spc_default() -> Self {
        ReferenceSpec::Spc {
            n_components: 5,
            threshold_ratio: 0.6,
            prior: PriorConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }

    pub fn horseshoe_default() -> Self {
        ReferenceSpec::Horseshoe {
            prior: PriorConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }

    /// Same model with a different sampler budget.
    pub fn with_mcmc(&self, m: McmcConfig) -> Self {
        let mut out = self.clone();
        match &mut out {
            ReferenceSpec::Spc { mcmc, .. } | ReferenceSpec::Horseshoe { mcmc, .. } => *mcmc = m,
        }
        out
    }

    pub fn mcmc(&self) -> McmcConfig {
        match self {
            ReferenceSpec::Spc { mcmc, .. } | ReferenceSpec::Horseshoe { mcmc, .. } => *mcmc,
        }
    }
}

/// Anything that can produce a reference fit from training data. Used for
/// per-fold refits during cross-validation.
pub trait ReferenceBuilder: Sync {
    fn build(&self, x: &DMatrix<f64>, y: &DVector<f64>, seed: u64) -> Result<ReferenceFit>;
}

impl ReferenceBuilder for ReferenceSpec {
    fn build(&self, x: &DMatrix<f64>, y: &DVector<f64>, seed: u64) -> Result<ReferenceFit> {
        match self {
            ReferenceSpec::Spc {
                n_components,
                threshold_ratio,
                prior,
                mcmc,
            } => {
                let basis = screen_and_spc(x, y, *n_components, *threshold_ratio)?;
                fit_spc_reference(basis, y, prior, &mcmc.with_seed(seed))
            }
            ReferenceSpec::Horseshoe { prior, mcmc } => {
                fit_rhs_regression(x, y, prior, &mcmc.with_seed(seed))
            }
        }
    }
}

impl<F> ReferenceBuilder for F
where
    F: Fn(&DMatrix<f64>, &DVector<f64>, u64) -> Result<ReferenceFit> + Sync,
{
    fn build(&self, x: &DMatrix<f64>, y: &DVector<f64>, seed: u64) -> Result<ReferenceFit> {
        self(x, y, seed)
    }
}

/// Potential scale reduction from split chains; values near 1 indicate the
/// chains agree.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[h..2 * h]]
        })
        .collect();
    let n = halves.first()?.len();
    if n < 2 || halves.len() < 2 {
        return None;
    }
    let means: Vec<f64> = halves.iter().map(|c| crate::stats::mean(c)).collect();
    let within = halves.iter().map(|c| crate::stats::var(c)).sum::<f64>() / halves.len() as f64;
    let between = n as f64 * crate::stats::var(&means);
    if within <= 0.0 {
        return None;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * within + between / n as f64;
    Some((var_plus / within).sqrt())
}
