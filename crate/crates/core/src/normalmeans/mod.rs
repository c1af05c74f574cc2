//! Complete selection through the normal-means reduction.
//!
//! Each column's sample correlation with the target is mapped through the
//! Fisher transformation to an approximately `N(θ_j, 1)` statistic, and
//! sparse-means procedures then decide which `θ_j` are nonzero.

pub mod ci90;
pub mod ebayes;
pub mod locfdr;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refmodel::{predictive_means, ReferenceFit};
use crate::stats::{pearson, quantile, sd};

pub use ci90::{ci90_select, Ci90Config, Ci90Fit};
pub use ebayes::{ebayes_median_select, laplace_posterior_median, EbFit};
pub use locfdr::{locfdr_select, LocfdrConfig, LocfdrModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Raw,
    ReferenceFiltered,
}

/// Scale of the z statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    Fixed(f64),
    /// Sample sd of the z values whose magnitude is below their 90th
    /// percentile.
    CentralSd,
}

impl Default for SigmaRule {
    fn default() -> Self {
        SigmaRule::Fixed(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMeansProblem {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub sigma: f64,
    pub theta_truth: Option<Vec<f64>>,
    pub source: Source,
    pub n: usize,
    pub sigma_rule: SigmaRule,
}

impl NormalMeansProblem {
    /// Build directly from statistics (no correlations).
    pub fn from_z(z: Vec<f64>, sigma: f64) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("z values must be finite".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::Input(format!("sigma = {sigma} must be positive")));
        }
        Ok(NormalMeansProblem {
            r: vec![f64::NAN; z.len()],
            z,
            sigma,
            theta_truth: None,
            source: Source::Raw,
            n: 0,
            sigma_rule: SigmaRule::Fixed(sigma),
        })
    }

    pub fn p(&self) -> usize {
        self.z.len()
    }

    /// `z / sigma`: statistics on the unit scale.
    pub fn unit_z(&self) -> Vec<f64> {
        self.z.iter().map(|v| v / self.sigma).collect()
    }
}

/// `√(n-3)·atanh(r)`.
pub fn fisher_z(r: f64, n: usize) -> f64 {
    ((n - 3) as f64).sqrt() * r.atanh()
}

/// Correlate every column of `x` with `target` and transform.
pub fn fisher_problem(x: &DMatrix<f64>, target: &DVector<f64>, rule: SigmaRule) -> Result<NormalMeansProblem> {
    let (n, p) = x.shape();
    if n <= 3 {
        return Err(Error::Domain(format!("n = {n}: the transform needs n >= 4")));
    }
    if target.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, target has {}", target.len())));
    }
    let mut r = Vec::with_capacity(p);
    let mut z = Vec::with_capacity(p);
    for j in 0..p {
        let rj = match pearson(x.column(j).iter(), target.iter()) {
            Some(v) => v,
            None => {
                log::warn!("column {j} or the target is constant; correlation set to 0");
                0.0
            }
        };
        if rj.abs() >= 1.0 {
            return Err(Error::InfiniteTransform(j));
        }
        r.push(rj);
        z.push(fisher_z(rj, n));
    }
    let sigma = match rule {
        SigmaRule::Fixed(s) => {
            if !(s > 0.0) {
                return Err(Error::Input(format!("sigma = {s} must be positive")));
            }
            s
        }
        SigmaRule::CentralSd => central_sd(&z)?,
    };
    Ok(NormalMeansProblem {
        r,
        z,
        sigma,
        theta_truth: None,
        source: Source::Raw,
        n,
        sigma_rule: rule,
    })
}

fn central_sd(z: &[f64]) -> Result<f64> {
    let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let cut = quantile(&mags, 0.9);
    let central: Vec<f64> = z.iter().copied().filter(|v| v.abs() < cut).collect();
    if central.len() < 2 {
        return Err(Error::Estimation("too few central z values to estimate the scale".into()));
    }
    let s = sd(&central);
    if !(s > 0.0) {
        return Err(Error::Estimation("central z values have zero spread".into()));
    }
    Ok(s)
}

/// The same problem with correlations taken against the reference's
/// predictive means.
pub fn filter_problem(raw: &NormalMeansProblem, reference: &ReferenceFit, x: &DMatrix<f64>) -> Result<NormalMeansProblem> {
    if reference.n_obs() != x.nrows() || (raw.n != 0 && raw.n != x.nrows()) {
        return Err(Error::Dimension(format!(
            "reference trained on {} rows, X has {}",
            reference.n_obs(),
            x.nrows()
        )));
    }
    if raw.p() != x.ncols() {
        return Err(Error::Dimension(format!("problem has {} coordinates, X has {} columns", raw.p(), x.ncols())));
    }
    let yhat = predictive_means(reference, x)?;
    let mut out = fisher_problem(x, &yhat, raw.sigma_rule)?;
    out.theta_truth = raw.theta_truth.clone();
    out.source = Source::ReferenceFiltered;
    Ok(out)
}

/// CSV `variable, r, z, selected_by_<method>...`.
pub fn write_problem_csv<W: Write>(
    out: W,
    problem: &NormalMeansProblem,
    names: &[String],
    selections: &[(&str, &[usize])],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["variable".to_string(), "r".into(), "z".into()];
    header.extend(selections.iter().map(|(m, _)| format!("selected_by_{m}")));
    w.write_record(&header)?;
    for j in 0..problem.p() {
        let mut row = vec![
            names.get(j).cloned().unwrap_or_else(|| j.to_string()),
            problem.r[j].to_string(),
            problem.z[j].to_string(),
        ];
        row.extend(
            selections
                .iter()
                .map(|(_, s)| if s.contains(&j) { "1".to_string() } else { "0".to_string() }),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
