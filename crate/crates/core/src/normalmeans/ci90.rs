//! Horseshoe normal-means model; a coordinate is selected when its central
//! posterior interval excludes zero.

use serde::{Deserialize, Serialize};

use super::NormalMeansProblem;
use crate::error::{config, Error, Result};
use crate::refmodel::McmcConfig;
use crate::rng;
use crate::stats::{inv_gamma, quantile, std_normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ci90Config {
    pub mcmc: McmcConfig,
    pub lower: f64,
    pub upper: f64,
    /// Scale of the half-Cauchy prior on the global shrinkage.
    pub global_scale: f64,
}

impl Default for Ci90Config {
    fn default() -> Self {
        Ci90Config {
            mcmc: McmcConfig {
                warmup: 1000,
                draws: 2000,
                keep: 1000,
                seed: 0,
            },
            lower: 0.05,
            upper: 0.95,
            global_scale: 1.0,
        }
    }
}

impl Ci90Config {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lower && self.lower < self.upper && self.upper <= 1.0) {
            return Err(config(format!("interval [{}, {}] is not a valid quantile pair", self.lower, self.upper)));
        }
        if !(self.global_scale > 0.0) {
            return Err(config("global_scale must be positive"));
        }
        if self.mcmc.draws == 0 || self.mcmc.keep == 0 {
            return Err(config("at least one kept draw required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ci90Fit {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub posterior_mean: Vec<f64>,
    pub selected: Vec<usize>,
}

pub fn ci90_select(problem: &NormalMeansProblem, cfg: &Ci90Config) -> Result<Ci90Fit> {
    cfg.validate()?;
    let p = problem.p();
    if p == 0 {
        return Err(Error::Input("empty problem".into()));
    }
    let s2 = problem.sigma * problem.sigma;
    let z = &problem.z;
    let mut r = rng::stream(cfg.mcmc.seed, 0xc190);

    let mut theta = vec![0.0; p];
    let mut lambda2 = vec![1.0; p];
    let mut nu = vec![1.0; p];
    let mut tau2: f64 = 1.0;
    let mut xi = 1.0;
    let a2 = cfg.global_scale * cfg.global_scale;

    let kept = cfg.mcmc.kept_iterations();
    let mut next_keep = 0;
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(kept.len()); p];
    for it in 0..cfg.mcmc.warmup + cfg.mcmc.draws {
        for j in 0..p {
            let prior_var = (tau2 * lambda2[j]).max(1e-30);
            let v = 1.0 / (1.0 / s2 + 1.0 / prior_var);
            theta[j] = v * z[j] / s2 + v.sqrt() * std_normal(&mut r);
        }
        for j in 0..p {
            lambda2[j] = inv_gamma(&mut r, 1.0, 1.0 / nu[j] + theta[j] * theta[j] / (2.0 * tau2)).max(1e-30);
            nu[j] = inv_gamma(&mut r, 1.0, 1.0 + 1.0 / lambda2[j]);
        }
        let ss: f64 = (0..p).map(|j| theta[j] * theta[j] / lambda2[j]).sum();
        tau2 = inv_gamma(&mut r, 0.5 * (p as f64 + 1.0), 1.0 / xi + 0.5 * ss).max(1e-30);
        xi = inv_gamma(&mut r, 1.0, 1.0 / a2 + 1.0 / tau2);
        if !tau2.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Estimation(format!("normal-means sampler diverged at iteration {it}")));
        }
        if it >= cfg.mcmc.warmup && next_keep < kept.len() && it - cfg.mcmc.warmup == kept[next_keep] {
            for j in 0..p {
                draws[j].push(theta[j]);
            }
            next_keep += 1;
        }
    }

    let mut fit = Ci90Fit {
        lower: Vec::with_capacity(p),
        upper: Vec::with_capacity(p),
        posterior_mean: Vec::with_capacity(p),
        selected: Vec::new(),
    };
    for (j, mut d) in draws.into_iter().enumerate() {
        fit.posterior_mean.push(d.iter().sum::<f64>() / d.len() as f64);
        d.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile(&d, cfg.lower), quantile(&d, cfg.upper));
        if lo > 0.0 || hi < 0.0 {
            fit.selected.push(j);
        }
        fit.lower.push(lo);
        fit.upper.push(hi);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(seed: u64) -> Ci90Config {
        Ci90Config {
            mcmc: McmcConfig {
                warmup: 500,
                draws: 1000,
                keep: 1000,
                seed,
            },
            ..Ci90Config::default()
        }
    }

    #[test]
    fn zeros_select_nothing() {
        let prob = NormalMeansProblem::from_z(vec![0.0; 50], 1.0).unwrap();
        let fit = ci90_select(&prob, &quick(1)).unwrap();
        assert!(fit.selected.is_empty());
    }

    #[test]
    fn single_strong_signal_is_the_only_selection() {
        for seed in 0..5 {
            let mut z = vec![0.0; 100];
            z[37] = 10.0;
            let prob = NormalMeansProblem::from_z(z, 1.0).unwrap();
            let fit = ci90_select(&prob, &quick(seed)).unwrap();
            assert_eq!(fit.selected, vec![37], "seed {seed}");
            assert!(fit.posterior_mean[37] > 8.0);
        }
    }

    #[test]
    fn null_selection_rate_is_small() {
        let mut r = rng::stream(2, 0);
        let z: Vec<f64> = (0..1000).map(|_| std_normal(&mut r)).collect();
        let prob = NormalMeansProblem::from_z(z, 1.0).unwrap();
        let fit = ci90_select(&prob, &quick(2)).unwrap();
        let rate = fit.selected.len() as f64 / 1000.0;
        assert!(rate < 0.05, "{rate}");
    }

    #[test]
    fn invalid_interval_is_rejected() {
        let cfg = Ci90Config {
            lower: 0.9,
            upper: 0.1,
            ..Ci90Config::default()
        };
        let prob = NormalMeansProblem::from_z(vec![1.0], 1.0).unwrap();
        assert!(ci90_select(&prob, &cfg).is_err());
    }
}
