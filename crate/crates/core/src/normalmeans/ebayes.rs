//! Empirical-Bayes posterior-median thresholding under a spike-and-Laplace
//! prior `(1 − w)·δ₀ + w·Laplace(a)` with unit-variance observations.

use super::NormalMeansProblem;
use crate::error::{Error, Result};
use crate::stats::{log_sum_exp, norm_logcdf, norm_logpdf, norm_logsf, norm_quantile};

pub const W_BOUNDS: (f64, f64) = (1e-4, 1.0 - 1e-4);
pub const A_BOUNDS: (f64, f64) = (0.01, 10.0);
const GRID: usize = 40;
const REFINE_ROUNDS: usize = 30;

/// Log density of `N(θ, 1)` observations with θ ~ Laplace(a).
pub fn log_laplace_marginal(x: f64, a: f64) -> f64 {
    (a / 2.0).ln()
        + a * a / 2.0
        + log_sum_exp(&[-a * x + norm_logcdf(x - a), a * x + norm_logsf(x + a)])
}

fn log_marginal(x: f64, w: f64, a: f64) -> f64 {
    log_sum_exp(&[(1.0 - w).ln() + norm_logpdf(x), w.ln() + log_laplace_marginal(x, a)])
}

fn log_likelihood(z: &[f64], w: f64, a: f64) -> f64 {
    z.iter().map(|&x| log_marginal(x, w, a)).sum()
}

/// Posterior median of θ given one observation `x`.
pub fn laplace_posterior_median(x: f64, w: f64, a: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if x < 0.0 {
        return -laplace_posterior_median(-x, w, a);
    }
    // P(θ > t | x) = w (a/2) e^{a²/2 − a x} Φ̄(t − x + a) / m(x) for t ≥ 0;
    // setting it to 1/2 gives Φ̄(t − x + a) = q below.
    let log_q = log_marginal(x, w, a) + a * x - a * a / 2.0 - w.ln() - a.ln();
    if log_q >= 0.0 {
        return 0.0;
    }
    let t = x - a - norm_quantile(log_q.exp());
    t.max(0.0)
}

/// The magnitude below which the posterior median is zero.
pub fn median_threshold(w: f64, a: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while laplace_posterior_median(hi, w, a) == 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if laplace_posterior_median(mid, w, a) == 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbFit {
    pub w: f64,
    pub a: f64,
    /// The marginal-likelihood maximum sits on a bound of the search box.
    pub at_boundary: bool,
    pub threshold: f64,
    pub medians: Vec<f64>,
    pub selected: Vec<usize>,
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Marginal maximum likelihood for `(w, a)`: log grid, then alternating
/// one-dimensional refinements in log coordinates.
pub fn fit_prior(z: &[f64]) -> (f64, f64, bool) {
    let (lw0, lw1) = (W_BOUNDS.0.ln(), W_BOUNDS.1.ln());
    let (la0, la1) = (A_BOUNDS.0.ln(), A_BOUNDS.1.ln());
    let at = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (GRID - 1) as f64;
    let mut best = (f64::NEG_INFINITY, lw0, la0);
    for i in 0..GRID {
        for k in 0..GRID {
            let (lw, la) = (at(lw0, lw1, i), at(la0, la1, k));
            let ll = log_likelihood(z, lw.exp(), la.exp());
            if ll > best.0 {
                best = (ll, lw, la);
            }
        }
    }
    let (mut ll, mut lw, mut la) = best;
    for _ in 0..REFINE_ROUNDS {
        lw = golden_max(|v| log_likelihood(z, v.exp(), la.exp()), lw0, lw1);
        la = golden_max(|v| log_likelihood(z, lw.exp(), v.exp()), la0, la1);
        let next = log_likelihood(z, lw.exp(), la.exp());
        if (next - ll).abs() < 1e-10 * (1.0 + ll.abs()) {
            break;
        }
        ll = next;
    }
    let near = |v: f64, b: f64| (v - b).abs() < 1e-6;
    let boundary = near(lw, lw0) || near(lw, lw1) || near(la, la0) || near(la, la1);
    (lw.exp(), la.exp(), boundary)
}

pub fn ebayes_median_select(problem: &NormalMeansProblem) -> Result<EbFit> {
    let p = problem.p();
    if p < 10 {
        return Err(Error::Input(format!("p = {p}: prior estimation needs at least 10 statistics")));
    }
    let z = problem.unit_z();
    let (w, a, at_boundary) = fit_prior(&z);
    if at_boundary {
        log::warn!("prior estimate on the search boundary (w = {w:.3e}, a = {a:.3})");
    }
    Ok(ebayes_median_with(&z, w, a, at_boundary))
}

/// Posterior medians for fixed prior parameters.
pub fn ebayes_median_with(z: &[f64], w: f64, a: f64, at_boundary: bool) -> EbFit {
    let medians: Vec<f64> = z.iter().map(|&x| laplace_posterior_median(x, w, a)).collect();
    let selected = (0..z.len()).filter(|&j| medians[j] != 0.0).collect();
    EbFit {
        w,
        a,
        at_boundary,
        threshold: median_threshold(w, a),
        medians,
        selected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats::{norm_pdf, std_normal};

    /// Posterior median by numerical integration of the posterior CDF:
    /// atom `(1 − w̃)` at 0 plus the continuous part integrated with Simpson's
    /// rule on each side of 0.
    fn quadrature_median(x: f64, w: f64, a: f64) -> f64 {
        let dens = |t: f64| a / 2.0 * (-a * t.abs()).exp() * norm_pdf(x - t);
        let simpson = |lo: f64, hi: f64| {
            if hi <= lo {
                return 0.0;
            }
            let m = 20_000;
            let h = (hi - lo) / m as f64;
            let mut s = dens(lo) + dens(hi);
            for i in 1..m {
                s += dens(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let (lo, hi) = (x.min(0.0) - 15.0, x.max(0.0) + 15.0);
        let g = simpson(lo, 0.0) + simpson(0.0, hi);
        let atom = (1.0 - w) * norm_pdf(x);
        let total = atom + w * g;
        let cdf = |t: f64| {
            let cont = if t < 0.0 { simpson(lo, t) } else { simpson(lo, 0.0) + simpson(0.0, t) };
            (w * cont + if t >= 0.0 { atom } else { 0.0 }) / total
        };
        let below0 = w * simpson(lo, 0.0) / total;
        if below0 < 0.5 && cdf(0.0) >= 0.5 {
            return 0.0;
        }
        let (mut a_, mut b_) = if below0 >= 0.5 { (lo, 0.0) } else { (0.0, hi) };
        for _ in 0..60 {
            let m = 0.5 * (a_ + b_);
            if cdf(m) < 0.5 {
                a_ = m;
            } else {
                b_ = m;
            }
        }
        0.5 * (a_ + b_)
    }

    #[test]
    fn laplace_marginal_matches_quadrature() {
        for &(x, a) in &[(0.0, 0.5), (2.0, 0.5), (-4.0, 2.0), (8.0, 0.1)] {
            let h = 1e-3;
            let g: f64 = (-40_000..40_000)
                .map(|i| {
                    let t = (i as f64 + 0.5) * h;
                    a / 2.0 * (-a * t.abs()).exp() * norm_pdf(x - t)
                })
                .sum::<f64>()
                * h;
            assert!((log_laplace_marginal(x, a) - g.ln()).abs() < 1e-6, "{x} {a}");
        }
    }

    #[test]
    fn closed_form_medians_match_quadrature() {
        let (w, a) = (0.2, 0.5);
        let mut t_seen = 0.0f64;
        for i in 0..=48 {
            let x = -6.0 + 0.25 * i as f64;
            let got = laplace_posterior_median(x, w, a);
            let want = quadrature_median(x, w, a);
            assert!((got - want).abs() < 1e-6, "x = {x}: {got} vs {want}");
            if got == 0.0 {
                t_seen = t_seen.max(x.abs());
            }
        }
        let t = median_threshold(w, a);
        assert!(t >= t_seen);
        for i in 0..=1200 {
            let x = -6.0 + 0.01 * i as f64;
            assert_eq!(laplace_posterior_median(x, w, a) == 0.0, x.abs() <= t, "{x}");
        }
    }

    #[test]
    fn zero_observation_has_zero_median() {
        for &(w, a) in &[(0.01, 0.1), (0.5, 1.0), (0.99, 5.0)] {
            assert_eq!(laplace_posterior_median(0.0, w, a), 0.0);
        }
    }

    #[test]
    fn vanishing_slab_weight_selects_nothing() {
        let z: Vec<f64> = (0..=24).map(|i| -6.0 + 0.5 * i as f64).collect();
        let fit = ebayes_median_with(&z, 1e-12, 0.5, false);
        assert!(fit.selected.is_empty());
        assert!(fit.medians.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn median_is_odd_monotone_and_shrinks() {
        let (w, a) = (0.3, 1.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=200 {
            let x = -10.0 + 0.1 * i as f64;
            let m = laplace_posterior_median(x, w, a);
            assert!(m >= prev - 1e-12);
            assert!(m.abs() <= x.abs());
            assert!((m + laplace_posterior_median(-x, w, a)).abs() < 1e-12);
            prev = m;
        }
    }

    #[test]
    fn selection_is_exactly_the_threshold_set() {
        let mut r = rng::stream(3, 0);
        let z: Vec<f64> = (0..500)
            .map(|j| if j < 50 { 4.0 * std_normal(&mut r) } else { std_normal(&mut r) })
            .collect();
        let prob = NormalMeansProblem::from_z(z.clone(), 1.0).unwrap();
        let fit = ebayes_median_select(&prob).unwrap();
        let by_t: Vec<usize> = (0..z.len()).filter(|&j| z[j].abs() > fit.threshold).collect();
        assert_eq!(fit.selected, by_t);
        assert!(fit.w > 0.03 && fit.w < 0.3, "{}", fit.w);
    }

    #[test]
    fn null_problem_pushes_weight_to_the_lower_bound() {
        let mut r = rng::stream(4, 0);
        let z: Vec<f64> = (0..500).map(|_| std_normal(&mut r)).collect();
        let fit = ebayes_median_select(&NormalMeansProblem::from_z(z, 1.0).unwrap()).unwrap();
        assert!(fit.selected.len() <= 2, "{}", fit.selected.len());
    }
}
