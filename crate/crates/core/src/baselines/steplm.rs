//! Stepwise least-squares selection by AIC.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ols::aic;
use crate::datagen::Dataset;
use crate::error::{config, Result};
use crate::linalg::{self, OrderedQr, RANK_TOL};
use crate::refmodel::{predictive_means, ReferenceFit};

/// Residual sums of squares are floored at this fraction of the total sum of
/// squares. A reference-filtered target can lie exactly in the span of the
/// design, where the raw AIC is `-inf` for every superset.
pub const RSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepConfig {
    pub direction: Direction,
    pub use_reference: bool,
    /// Maximum accepted moves; `None` for no limit.
    pub max_steps: Option<usize>,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            direction: Direction::Backward,
            use_reference: false,
            max_steps: None,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == Some(0) {
            return Err(config("max_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Selected columns in increasing order.
    pub selected: Vec<usize>,
    /// AIC of the starting model and after every accepted move.
    pub aic_path: Vec<f64>,
    pub intercept: f64,
    /// Coefficients of `selected`, in the same order.
    pub coefficients: DVector<f64>,
}

impl StepResult {
    pub fn predict(&self, x_new: &DMatrix<f64>) -> DVector<f64> {
        (linalg::columns(x_new, &self.selected) * &self.coefficients).add_scalar(self.intercept)
    }
}

/// The target a selector should fit: `y`, or the reference's predictive
/// means at the training rows.
pub(crate) fn selection_target(
    d: &Dataset,
    use_reference: bool,
    reference: Option<&ReferenceFit>,
) -> Result<DVector<f64>> {
    if !use_reference {
        return Ok(d.y.clone());
    }
    match reference {
        Some(r) => predictive_means(r, &d.x),
        None => Err(config("use_reference is set but no reference fit was given")),
    }
}

struct Current {
    qr: OrderedQr,
    /// Coefficients of the target on the kept columns.
    coef: DVector<f64>,
    resid: DMatrix<f64>,
    rss: f64,
}

fn fit_current(x: &DMatrix<f64>, t: &DMatrix<f64>, active: &[usize]) -> Current {
    let qr = OrderedQr::new(&linalg::with_intercept(&linalg::columns(x, active)));
    let resid = qr.residuals(t);
    let rss = resid.norm_squared();
    let coef = qr.solve(t).column(0).into_owned();
    Current { qr, coef, resid, rss }
}

/// Greedy AIC stepping with an always-present intercept. Backward starts from
/// all columns and drops; forward starts from the intercept and adds. Each
/// step takes the move with the lowest AIC (ties to the lowest column index)
/// and stops when no move lowers it.
pub fn steplm(d: &Dataset, cfg: &StepConfig, reference: Option<&ReferenceFit>) -> Result<StepResult> {
    cfg.validate()?;
    let target = selection_target(d, cfg.use_reference, reference)?;
    let (n, p) = (d.n(), d.p());
    let x = &d.x;
    let t = DMatrix::from_column_slice(n, 1, target.as_slice());
    let mean = target.mean();
    let tss: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
    let floor = RSS_FLOOR * tss.max(f64::MIN_POSITIVE);
    let crit = |rss: f64, k: usize| aic(rss.max(floor), n, k);

    let mut active: Vec<usize> = match cfg.direction {
        Direction::Backward => (0..p).collect(),
        Direction::Forward => Vec::new(),
    };
    let mut cur = fit_current(x, &t, &active);
    let mut aic_path = vec![crit(cur.rss, active.len() + 1)];
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let mut steps = 0;
    while steps < max_steps {
        let k = active.len() + 1;
        let now = *aic_path.last().unwrap();
        let mv = match cfg.direction {
            Direction::Backward => best_drop(&cur, k, &crit),
            Direction::Forward => best_add(x, &cur, &active, k, n, &crit),
        };
        let Some((pos, value)) = mv else { break };
        if !(value < now) {
            break;
        }
        match cfg.direction {
            Direction::Backward => {
                active.remove(pos);
            }
            Direction::Forward => {
                let at = active.partition_point(|&a| a < pos);
                active.insert(at, pos);
            }
        }
        cur = fit_current(x, &t, &active);
        aic_path.push(crit(cur.rss, active.len() + 1));
        steps += 1;
    }

    let mut full = DVector::zeros(active.len() + 1);
    for (r, &c) in cur.qr.kept.iter().enumerate() {
        full[c] = cur.coef[r];
    }
    Ok(StepResult {
        selected: active,
        aic_path,
        intercept: full[0],
        coefficients: full.rows(1, full.len() - 1).into_owned(),
    })
}

/// Best single drop as (position in `active`, resulting AIC). Dropping
/// kept column `c` raises the RSS by `coef_c² / [(XᵀX)⁻¹]_cc`.
fn best_drop(cur: &Current, k: usize, crit: &impl Fn(f64, usize) -> f64) -> Option<(usize, f64)> {
    // A column dependent on the others costs nothing to drop.
    if let Some(&c) = cur.qr.dropped.iter().find(|&&c| c > 0) {
        return Some((c - 1, crit(cur.rss, k - 1)));
    }
    let rank = cur.qr.rank();
    let rinv = cur
        .qr
        .r
        .solve_upper_triangular(&DMatrix::identity(rank, rank))?;
    let mut best: Option<(usize, f64)> = None;
    for (row, &c) in cur.qr.kept.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let g = rinv.row(row).norm_squared();
        let value = crit(cur.rss + cur.coef[row].powi(2) / g, k - 1);
        if best.is_none_or(|(_, v)| value < v) {
            best = Some((c - 1, value));
        }
    }
    best
}

/// Best single addition as (column index, resulting AIC).
fn best_add(
    x: &DMatrix<f64>,
    cur: &Current,
    active: &[usize],
    k: usize,
    n: usize,
    crit: &impl Fn(f64, usize) -> f64,
) -> Option<(usize, f64)> {
    if k + 1 >= n {
        return None;
    }
    let q = &cur.qr.q;
    let r = cur.resid.column(0);
    let mut best: Option<(usize, f64)> = None;
    for j in 0..x.ncols() {
        if active.binary_search(&j).is_ok() {
            continue;
        }
        let col = x.column(j);
        let orig = col.norm_squared();
        let tilde = col - q * (q.transpose() * col);
        let nrm = tilde.norm_squared();
        if orig == 0.0 || nrm <= RANK_TOL * RANK_TOL * orig {
            continue;
        }
        let gain = tilde.dot(&r).powi(2) / nrm;
        let value = crit((cur.rss - gain).max(0.0), k + 1);
        if best.is_none_or(|(_, v)| value < v) {
            best = Some((j, value));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::ols::ols_fit;
    use crate::refmodel::Basis;
    use crate::rng;
    use crate::stats::std_normal;

    fn dataset(n: usize, p: usize, seed: u64, y: impl Fn(&DMatrix<f64>, usize) -> f64) -> Dataset {
        let mut r = rng::stream(seed, 0);
        let x = DMatrix::from_fn(n, p, |_, _| std_normal(&mut r));
        let yv = DVector::from_fn(n, |i, _| y(&x, i));
        Dataset::new(x, yv, (0..p).map(|j| format!("x{j}")).collect()).unwrap()
    }

    fn direct_aic(d: &Dataset, t: &DVector<f64>, set: &[usize]) -> f64 {
        let design = linalg::with_intercept(&linalg::columns(&d.x, set));
        let fit = ols_fit(&design, t).unwrap();
        let mean = t.mean();
        let tss: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
        aic(fit.rss.max(RSS_FLOOR * tss), d.n(), set.len() + 1)
    }

    #[test]
    fn forward_stops_after_exact_predictor() {
        let d = dataset(30, 5, 1, |x, i| 2.0 + 3.0 * x[(i, 1)]);
        let cfg = StepConfig {
            direction: Direction::Forward,
            ..StepConfig::default()
        };
        let res = steplm(&d, &cfg, None).unwrap();
        assert_eq!(res.selected, vec![1]);
        assert!((res.coefficients[0] - 3.0).abs() < 1e-10);
        assert!((res.intercept - 2.0).abs() < 1e-10);
    }

    #[test]
    fn each_backward_move_is_the_best_direct_refit() {
        let mut r = rng::stream(9, 0);
        let d = dataset(40, 8, 2, |x, i| x[(i, 0)] - 0.5 * x[(i, 3)]);
        let noisy = d.y.map(|v| v + std_normal(&mut r));
        let d = d.with_target(noisy).unwrap();
        let res = steplm(&d, &StepConfig::default(), None).unwrap();
        // Replay the path, brute-forcing every drop.
        let mut active: Vec<usize> = (0..8).collect();
        let mut expected = vec![direct_aic(&d, &d.y, &active)];
        loop {
            let cand = (0..active.len())
                .map(|pos| {
                    let mut s = active.clone();
                    s.remove(pos);
                    (pos, direct_aic(&d, &d.y, &s))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if cand.1 >= *expected.last().unwrap() {
                break;
            }
            active.remove(cand.0);
            expected.push(cand.1);
            if active.is_empty() {
                break;
            }
        }
        assert_eq!(res.selected, active);
        assert_eq!(res.aic_path.len(), expected.len());
        for (a, b) in res.aic_path.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-8);
        }
        for w in res.aic_path.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn forward_gains_match_direct_refits() {
        let mut r = rng::stream(4, 0);
        let d = dataset(50, 6, 3, |x, i| x[(i, 2)] + x[(i, 4)]);
        let noisy = d.y.map(|v| v + 0.5 * std_normal(&mut r));
        let d = d.with_target(noisy).unwrap();
        let cfg = StepConfig {
            direction: Direction::Forward,
            ..StepConfig::default()
        };
        let res = steplm(&d, &cfg, None).unwrap();
        assert!(res.selected.contains(&2) && res.selected.contains(&4));
        let want = direct_aic(&d, &d.y, &res.selected);
        assert!((res.aic_path.last().unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn duplicated_column_is_dropped_first() {
        let mut d = dataset(30, 3, 5, |x, i| x[(i, 0)]);
        let dup = d.x.column(0).into_owned();
        d.x = d.x.clone().insert_column(3, 0.0);
        d.x.set_column(3, &dup);
        d.column_names.push("dup".into());
        let res = steplm(&d, &StepConfig::default(), None).unwrap();
        assert_eq!(res.selected, vec![0]);
    }

    #[test]
    fn reference_replaces_target() {
        let mut r = rng::stream(6, 0);
        let d = dataset(40, 5, 7, |x, i| x[(i, 0)]);
        let noisy = d.y.map(|v| v + std_normal(&mut r));
        let d = d.with_target(noisy).unwrap();
        let betas = DMatrix::from_fn(3, 5, |s, j| if j == 0 { 1.0 + 0.1 * s as f64 } else { 0.0 });
        let reference =
            ReferenceFit::from_draws(Basis::Identity { n_features: 5 }, vec![0.0; 3], betas, vec![1.0; 3], &d.x)
                .unwrap();
        let cfg = StepConfig {
            use_reference: true,
            ..StepConfig::default()
        };
        assert!(steplm(&d, &cfg, None).is_err());
        let res = steplm(&d, &cfg, Some(&reference)).unwrap();
        assert_eq!(res.selected, vec![0]);
        let manual = d.with_target(reference.yhat.clone()).unwrap();
        let plain = steplm(&manual, &StepConfig::default(), None).unwrap();
        assert_eq!(plain.selected, res.selected);
    }

    #[test]
    fn max_steps_limits_moves() {
        let d = dataset(30, 6, 8, |x, i| x[(i, 0)]);
        let cfg = StepConfig {
            max_steps: Some(2),
            ..StepConfig::default()
        };
        let res = steplm(&d, &cfg, None).unwrap();
        assert_eq!(res.aic_path.len(), 3);
        assert!(StepConfig {
            max_steps: Some(0),
            ..StepConfig::default()
        }
        .validate()
        .is_err());
    }
}
