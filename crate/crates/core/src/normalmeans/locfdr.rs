//! Local false discovery rate with a theoretical N(0, 1) null.
//!
//! The marginal density is estimated by Poisson regression of histogram
//! counts on a natural cubic spline basis; the null proportion by central
//! matching of the fitted log density.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::NormalMeansProblem;
use crate::error::{config, Error, Result};
use crate::stats::{norm_logpdf, norm_pdf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocfdrConfig {
    /// Degrees of freedom of the spline (excluding the intercept).
    pub df: usize,
    pub threshold: f64,
    pub n_bins: usize,
    /// Skip central matching and use this null proportion.
    pub pi0: Option<f64>,
    /// Half-width of the window used for central matching.
    pub central_halfwidth: f64,
}

impl Default for LocfdrConfig {
    fn default() -> Self {
        LocfdrConfig {
            df: 7,
            threshold: 0.2,
            n_bins: 120,
            pi0: None,
            central_halfwidth: 1.0,
        }
    }
}

impl LocfdrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.df < 2 {
            return Err(config(format!("df = {} must be at least 2", self.df)));
        }
        if self.n_bins < self.df + 2 {
            return Err(config(format!("{} bins cannot support df = {}", self.n_bins, self.df)));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(config(format!("threshold = {} outside (0, 1]", self.threshold)));
        }
        if let Some(p) = self.pi0 {
            if !(p > 0.0 && p <= 1.0) {
                return Err(config(format!("pi0 = {p} outside (0, 1]")));
            }
        }
        if !(self.central_halfwidth > 0.0) {
            return Err(config("central_halfwidth must be positive"));
        }
        Ok(())
    }
}

/// Natural cubic spline with `knots.len()` basis functions, the first two
/// being 1 and x. Linear beyond the boundary knots.
#[derive(Debug, Clone, PartialEq)]
struct NaturalSpline {
    knots: Vec<f64>,
    lo: f64,
    width: f64,
}

impl NaturalSpline {
    fn new(lo: f64, hi: f64, n_knots: usize) -> Self {
        let width = hi - lo;
        let knots = (0..n_knots).map(|i| i as f64 / (n_knots - 1) as f64).collect();
        NaturalSpline { knots, lo, width }
    }

    fn dim(&self) -> usize {
        self.knots.len()
    }

    fn row(&self, x: f64) -> Vec<f64> {
        let u = (x - self.lo) / self.width;
        let k = &self.knots;
        let last = k.len() - 1;
        let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
        let d = |i: usize| (cube(u - k[i]) - cube(u - k[last])) / (k[last] - k[i]);
        let mut row = Vec::with_capacity(k.len());
        row.push(1.0);
        row.push(u);
        let d_end = d(last - 1);
        for i in 0..last - 1 {
            row.push(d(i) - d_end);
        }
        row
    }

    fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| self.row(x)).collect();
        DMatrix::from_fn(xs.len(), self.dim(), |i, j| rows[i][j])
    }
}

const IRLS_MAX_ITERS: usize = 100;
const IRLS_TOL: f64 = 1e-10;

/// Poisson log-linear regression of `counts` on `basis` by IRLS.
fn poisson_irls(basis: &DMatrix<f64>, counts: &[f64]) -> Result<DVector<f64>> {
    let m = counts.len();
    let deviance = |mu: &[f64]| -> f64 {
        2.0 * counts
            .iter()
            .zip(mu)
            .map(|(&y, &u)| if y > 0.0 { y * (y / u).ln() - (y - u) } else { u })
            .sum::<f64>()
    };
    let mut eta: Vec<f64> = counts.iter().map(|&y| (y + 0.1).ln()).collect();
    let mut mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let mut dev = deviance(&mu);
    for _ in 0..IRLS_MAX_ITERS {
        let sw: Vec<f64> = mu.iter().map(|u| u.sqrt()).collect();
        let a = DMatrix::from_fn(m, basis.ncols(), |i, j| sw[i] * basis[(i, j)]);
        let b = DVector::from_fn(m, |i, _| sw[i] * (eta[i] + (counts[i] - mu[i]) / mu[i]));
        let beta = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::Estimation(format!("density regression: {e}")))?;
        let new_eta = basis * &beta;
        eta = new_eta.iter().copied().collect();
        mu = eta.iter().map(|e| e.exp()).collect();
        if mu.iter().any(|u| !u.is_finite() || *u <= 0.0) {
            return Err(Error::Estimation("density regression diverged".into()));
        }
        let new_dev = deviance(&mu);
        if (new_dev - dev).abs() <= IRLS_TOL * (new_dev.abs() + 0.1) {
            return Ok(beta);
        }
        dev = new_dev;
    }
    Err(Error::Estimation(format!(
        "density regression did not converge in {IRLS_MAX_ITERS} iterations"
    )))
}

/// `π0·φ(z)/f(z)` clipped to [0, 1].
pub fn local_fdr(pi0: f64, density: f64, z: f64) -> f64 {
    (pi0 * norm_pdf(z) / density).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocfdrModel {
    /// Bin edges, `n_bins + 1` values.
    pub breaks: Vec<f64>,
    pub counts: Vec<f64>,
    /// Fitted marginal density at the bin midpoints.
    pub density_mids: Vec<f64>,
    pub pi0: f64,
    /// Fitted marginal density at each z.
    pub density: Vec<f64>,
    pub lfdr: Vec<f64>,
    pub selected: Vec<usize>,
    spline: NaturalSpline,
    coef: DVector<f64>,
    scale: f64,
}

impl LocfdrModel {
    /// Fitted marginal density at a unit-scale statistic.
    pub fn density_at(&self, z: f64) -> f64 {
        let row = self.spline.row(z);
        row.iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum::<f64>().exp() / self.scale
    }
}

pub fn locfdr_select(problem: &NormalMeansProblem, cfg: &LocfdrConfig) -> Result<LocfdrModel> {
    cfg.validate()?;
    let p = problem.p();
    if p < 50 {
        return Err(Error::Input(format!("p = {p}: density estimation needs at least 50 statistics")));
    }
    let z = problem.unit_z();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min) - 0.1;
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 0.1;
    let nb = cfg.n_bins;
    let width = (hi - lo) / nb as f64;
    let breaks: Vec<f64> = (0..=nb).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0.0; nb];
    for &v in &z {
        let b = (((v - lo) / width) as usize).min(nb - 1);
        counts[b] += 1.0;
    }
    let mids: Vec<f64> = (0..nb).map(|i| lo + (i as f64 + 0.5) * width).collect();

    let spline = NaturalSpline::new(mids[0], mids[nb - 1], cfg.df + 1);
    let basis = spline.design(&mids);
    let coef = poisson_irls(&basis, &counts)?;
    let scale = p as f64 * width;
    let log_f_mids: Vec<f64> = (&basis * &coef).iter().map(|e| e - scale.ln()).collect();
    let density_mids: Vec<f64> = log_f_mids.iter().map(|v| v.exp()).collect();

    let pi0 = match cfg.pi0 {
        Some(v) => v,
        None => central_match(&mids, &log_f_mids, cfg.central_halfwidth)?,
    };
    let mut model = LocfdrModel {
        breaks,
        counts,
        density_mids,
        pi0,
        density: Vec::new(),
        lfdr: Vec::new(),
        selected: Vec::new(),
        spline,
        coef,
        scale,
    };
    model.density = z.iter().map(|&v| model.density_at(v)).collect();
    model.lfdr = z.iter().zip(&model.density).map(|(&v, &f)| local_fdr(pi0, f, v)).collect();
    model.selected = (0..p).filter(|&j| model.lfdr[j] < cfg.threshold).collect();
    Ok(model)
}

/// Quadratic least-squares fit of the log density on the central window;
/// the null proportion is the fitted density at 0 over φ(0).
fn central_match(mids: &[f64], log_f: &[f64], halfwidth: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..mids.len()).filter(|&i| mids[i].abs() <= halfwidth).collect();
    if idx.len() < 3 {
        return Err(Error::Estimation(format!(
            "only {} bins in the central window; cannot estimate the null proportion",
            idx.len()
        )));
    }
    let a = DMatrix::from_fn(idx.len(), 3, |r, c| mids[idx[r]].powi(c as i32));
    let b = DVector::from_fn(idx.len(), |r, _| log_f[idx[r]]);
    let fit = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Estimation(format!("central matching: {e}")))?;
    let pi0 = (fit[0] - norm_logpdf(0.0)).exp();
    if !pi0.is_finite() || pi0 <= 0.0 {
        return Err(Error::Estimation(format!("null proportion estimate {pi0}")));
    }
    if pi0 > 1.0 {
        log::warn!("null proportion estimate {pi0:.4} exceeds 1; clipped");
        return Ok(1.0);
    }
    Ok(pi0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats::std_normal;

    fn problem(z: Vec<f64>) -> NormalMeansProblem {
        NormalMeansProblem::from_z(z, 1.0).unwrap()
    }

    #[test]
    fn spline_is_linear_outside_and_reproduces_cubics_inside() {
        let s = NaturalSpline::new(-3.0, 3.0, 8);
        // Any natural spline is linear beyond the boundary; check that the
        // non-constant functions have zero second difference there.
        for x in [3.5, 5.0, -4.0] {
            let (a, b, c) = (s.row(x - 0.1), s.row(x), s.row(x + 0.1));
            for j in 0..s.dim() {
                assert!((a[j] - 2.0 * b[j] + c[j]).abs() < 1e-10, "{x} {j}");
            }
        }
        // The basis has full rank on a fine grid.
        let xs: Vec<f64> = (0..200).map(|i| -3.0 + 6.0 * i as f64 / 199.0).collect();
        let d = s.design(&xs);
        let sv = d.singular_values();
        assert!(sv.min() > 1e-8 * sv.max());
    }

    #[test]
    fn exact_null_density_gives_unit_lfdr() {
        for z in [-2.0, 0.0, 0.7, 3.0] {
            let pi0 = 0.9;
            assert_eq!(local_fdr(pi0, pi0 * norm_pdf(z), z), 1.0);
        }
    }

    #[test]
    fn irls_recovers_log_linear_counts() {
        let s = NaturalSpline::new(0.0, 1.0, 4);
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let b = s.design(&xs);
        let counts: Vec<f64> = xs.iter().map(|x| (3.0 - 2.0 * x).exp()).collect();
        let coef = poisson_irls(&b, &counts).unwrap();
        let fitted = &b * &coef;
        for (f, c) in fitted.iter().zip(&counts) {
            assert!((f.exp() - c).abs() < 1e-6 * c);
        }
    }

    #[test]
    fn small_problems_are_rejected() {
        assert!(locfdr_select(&problem(vec![0.0; 49]), &LocfdrConfig::default()).is_err());
    }

    #[test]
    fn pure_null_selects_at_most_one_percent() {
        let reps = 20;
        let p = 1000;
        let mut total = 0;
        for rep in 0..reps {
            let mut r = rng::stream(100 + rep, 0);
            let z: Vec<f64> = (0..p).map(|_| std_normal(&mut r)).collect();
            let m = locfdr_select(&problem(z), &LocfdrConfig::default()).unwrap();
            assert!(m.pi0 > 0.8 && m.pi0 <= 1.0, "{}", m.pi0);
            assert!(m.lfdr.iter().all(|v| (0.0..=1.0).contains(v)));
            total += m.selected.len();
        }
        let rate = total as f64 / (reps * p as u64) as f64;
        assert!(rate <= 0.01, "{rate}");
    }

    #[test]
    fn strong_signals_are_found() {
        let mut r = rng::stream(7, 0);
        let z: Vec<f64> = (0..1000)
            .map(|j| if j < 50 { 5.0 + std_normal(&mut r) } else { std_normal(&mut r) })
            .collect();
        let m = locfdr_select(&problem(z), &LocfdrConfig::default()).unwrap();
        let hits = m.selected.iter().filter(|&&j| j < 50).count();
        let false_hits = m.selected.len() - hits;
        assert!(hits >= 40, "{hits}");
        assert!(false_hits <= 5, "{false_hits}");
        assert!(m.pi0 > 0.85, "{}", m.pi0);
        assert!(m.density_mids.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn pi0_override_is_used() {
        let mut r = rng::stream(8, 0);
        let z: Vec<f64> = (0..200).map(|_| std_normal(&mut r)).collect();
        let cfg = LocfdrConfig {
            pi0: Some(0.5),
            ..LocfdrConfig::default()
        };
        assert_eq!(locfdr_select(&problem(z), &cfg).unwrap().pi0, 0.5);
    }

    #[test]
    fn adding_nulls_raises_pi0() {
        // 200 shifted signals and 100 nulls; the null count then doubles ten
        // times.
        let mut r = rng::stream(9, 0);
        let mut z: Vec<f64> = (0..200).map(|_| 3.0 + std_normal(&mut r)).collect();
        z.extend((0..100).map(|_| std_normal(&mut r)));
        let mut pis = Vec::new();
        for step in 0..10 {
            z.extend((0..100usize << step).map(|_| std_normal(&mut r)));
            pis.push(locfdr_select(&problem(z.clone()), &LocfdrConfig::default()).unwrap().pi0);
        }
        let violations = pis.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(violations <= 1, "{pis:?}");
    }
}
