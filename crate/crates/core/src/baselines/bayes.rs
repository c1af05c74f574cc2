//! Backward elimination driven by Bayesian p-values of a horseshoe regression.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::steplm::selection_target;
use crate::datagen::Dataset;
use crate::error::{config, Error, Result};
use crate::linalg;
use crate::projpred::{cv_reference_lpd, CvReferences};
use crate::refmodel::{fit_rhs_regression_keyed, McmcConfig, PriorConfig, ReferenceFit};
use crate::rng;

/// `min{P(θ ≤ 0), P(θ > 0)}` from posterior draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PValue {
    pub value: f64,
    /// One tail had no draws; `value` is then `1/S`, an upper bound.
    pub below_resolution: bool,
}

pub fn bayes_pvalue(draws: &[f64]) -> Result<PValue> {
    if draws.is_empty() {
        return Err(Error::Input("no draws".into()));
    }
    let s = draws.len() as f64;
    let nonpos = draws.iter().filter(|&&v| v <= 0.0).count() as f64;
    let tail = nonpos.min(s - nonpos) / s;
    if tail == 0.0 {
        return Ok(PValue {
            value: 1.0 / s,
            below_resolution: true,
        });
    }
    Ok(PValue {
        value: tail,
        below_resolution: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesStepConfig {
    pub prior: PriorConfig,
    pub mcmc: McmcConfig,
    pub k_folds: usize,
    pub use_reference: bool,
    pub seed: u64,
}

impl Default for BayesStepConfig {
    fn default() -> Self {
        BayesStepConfig {
            prior: PriorConfig::default(),
            mcmc: McmcConfig {
                warmup: 200,
                draws: 200,
                keep: 200,
                seed: 0,
            },
            k_folds: 5,
            use_reference: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesStepResult {
    /// Selected columns in increasing order.
    pub selected: Vec<usize>,
    /// Columns removed, in order of removal.
    pub removed: Vec<usize>,
    /// Cross-validated elpd of the starting model and after each accepted drop.
    pub elpd_path: Vec<f64>,
    /// Fit of the final model on the full data.
    pub fit: ReferenceFit,
}

impl BayesStepResult {
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<nalgebra::DVector<f64>> {
        crate::refmodel::predictive_means(&self.fit, &linalg::columns(x_new, &self.selected))
    }
}

/// Start from the horseshoe regression on every column; repeatedly propose
/// dropping the column with the largest Bayesian p-value and accept when the
/// K-fold elpd of the reduced model is not lower.
pub fn bayes_stepwise(
    d: &Dataset,
    cfg: &BayesStepConfig,
    reference: Option<&ReferenceFit>,
) -> Result<BayesStepResult> {
    cfg.prior.validate()?;
    if cfg.k_folds < 2 {
        return Err(config(format!("K = {}: at least two folds required", cfg.k_folds)));
    }
    let target = selection_target(d, cfg.use_reference, reference)?;
    // Common seeds, and random streams keyed by original column, so that
    // successive models share Monte Carlo noise on the columns they have in
    // common. Without this the elpd comparison is decided by sampler noise.
    let keys = |cols: &[usize]| cols.iter().map(|&c| c as u64).collect::<Vec<_>>();
    let fit_on = |cols: &[usize], seed: u64| {
        let x = linalg::columns(&d.x, cols);
        fit_rhs_regression_keyed(&x, &target, &cfg.prior, &cfg.mcmc.with_seed(seed), &keys(cols))
    };
    let elpd_of = |cols: &[usize]| -> Result<f64> {
        let x = linalg::columns(&d.x, cols);
        let k = keys(cols);
        let builder = |xt: &DMatrix<f64>, yt: &nalgebra::DVector<f64>, seed: u64| {
            fit_rhs_regression_keyed(xt, yt, &cfg.prior, &cfg.mcmc.with_seed(seed), &k)
        };
        let cv = CvReferences::build(&x, &target, cfg.k_folds, &builder, cfg.seed)?;
        Ok(cv_reference_lpd(&x, &target, &cv)?.iter().sum())
    };
    let full_seed = rng::derive(cfg.seed, 0);

    let mut active: Vec<usize> = (0..d.p()).collect();
    let mut fit = fit_on(&active, full_seed)?;
    let mut elpd_path = vec![elpd_of(&active)?];
    let mut removed = Vec::new();
    while !active.is_empty() {
        let mut worst = (0, f64::NEG_INFINITY);
        for pos in 0..active.len() {
            let col: Vec<f64> = fit.beta_draws.column(pos).iter().copied().collect();
            let pv = bayes_pvalue(&col)?.value;
            if pv > worst.1 {
                worst = (pos, pv);
            }
        }
        let mut reduced = active.clone();
        let gone = reduced.remove(worst.0);
        let elpd = elpd_of(&reduced)?;
        if elpd < *elpd_path.last().unwrap() {
            break;
        }
        log::debug!("dropped column {gone} (p = {:.3}), elpd {elpd:.3}", worst.1);
        active = reduced;
        removed.push(gone);
        elpd_path.push(elpd);
        fit = fit_on(&active, full_seed)?;
    }
    Ok(BayesStepResult {
        selected: active,
        removed,
        elpd_path,
        fit,
    })
}
