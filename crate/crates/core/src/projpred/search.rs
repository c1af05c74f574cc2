//! Greedy forward search over projected submodels.

use nalgebra::{DMatrix, DVector};

use super::projection::thinned_draws;
use crate::error::{Error, Result};
use crate::refmodel::ReferenceFit;

/// Candidates whose residualized norm falls below this fraction of their
/// centered norm add nothing to the current span.
const DEPENDENT_TOL: f64 = 1e-10;

/// Result of a forward search: the ranking and the mean projection KL after
/// each addition (entry 0 is the intercept-only model).
#[derive(Debug, Clone, PartialEq)]
pub struct SearchPath {
    pub ranking: Vec<usize>,
    pub mean_kl: Vec<f64>,
}

/// Forward search over all columns with the default 20 projection draws.
pub fn forward_search(reference: &ReferenceFit, x: &DMatrix<f64>, max_size: usize) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..x.ncols()).collect();
    Ok(forward_search_in(reference, x, &all, max_size, 20)?.ranking)
}

/// Forward search restricted to `candidates`.
///
/// Each step adds the candidate that minimizes the mean (over `n_draws`
/// thinned reference draws) projection KL. Ties go to the lowest column
/// index. Columns already in the span of the selection contribute zero
/// improvement and are only picked once nothing else helps.
pub fn forward_search_in(
    reference: &ReferenceFit,
    x: &DMatrix<f64>,
    candidates: &[usize],
    max_size: usize,
    n_draws: usize,
) -> Result<SearchPath> {
    let (n, p) = x.shape();
    if reference.n_obs() != n {
        return Err(Error::Dimension(format!(
            "reference has {} training rows, design has {n}",
            reference.n_obs()
        )));
    }
    if let Some(&bad) = candidates.iter().find(|&&j| j >= p) {
        return Err(Error::Dimension(format!("candidate {bad} out of range")));
    }
    let mut cand: Vec<usize> = candidates.to_vec();
    cand.sort_unstable();
    cand.dedup();
    let max_size = max_size.min(cand.len());

    let draws = thinned_draws(reference.n_draws(), n_draws);
    let nf = n as f64;
    let sigma2: Vec<f64> = draws.iter().map(|&s| reference.sigma_draws[s].powi(2)).collect();

    // Residuals of each draw against the current span (intercept only at start).
    let mut resid: Vec<DVector<f64>> = draws
        .iter()
        .map(|&s| {
            let f = reference.mean_draws.row(s).transpose();
            let m = f.mean();
            f.add_scalar(-m)
        })
        .collect();
    let mut rss: Vec<f64> = resid.iter().map(|r| r.norm_squared()).collect();

    // Candidate columns residualized against the current span.
    let mut cols: Vec<DVector<f64>> = cand
        .iter()
        .map(|&j| {
            let c = x.column(j).into_owned();
            let m = c.mean();
            c.add_scalar(-m)
        })
        .collect();
    let base_norm: Vec<f64> = cols.iter().map(|c| c.norm_squared()).collect();
    let mut active = vec![true; cand.len()];

    let score = |rss: &[f64]| -> f64 {
        rss.iter()
            .zip(&sigma2)
            .map(|(r, s2)| 0.5 * nf * ((s2 + r / nf) / s2).ln())
            .sum::<f64>()
            / rss.len() as f64
    };

    let mut ranking = Vec::with_capacity(max_size);
    let mut mean_kl = vec![score(&rss)];
    for _ in 0..max_size {
        let mut best: Option<(usize, f64, Option<Vec<f64>>)> = None;
        for (c, col) in cols.iter().enumerate() {
            if !active[c] {
                continue;
            }
            let nrm = col.norm_squared();
            let (value, new_rss) = if nrm <= DEPENDENT_TOL * DEPENDENT_TOL * base_norm[c] || nrm == 0.0 {
                (score(&rss), None)
            } else {
                let updated: Vec<f64> = resid
                    .iter()
                    .zip(&rss)
                    .map(|(r, old)| (old - col.dot(r).powi(2) / nrm).max(0.0))
                    .collect();
                (score(&updated), Some(updated))
            };
            if best.as_ref().is_none_or(|(_, v, _)| value < *v) {
                best = Some((c, value, new_rss));
            }
        }
        let Some((c, value, new_rss)) = best else { break };
        active[c] = false;
        ranking.push(cand[c]);
        mean_kl.push(value);
        if let Some(updated) = new_rss {
            let q = &cols[c] / cols[c].norm();
            for r in resid.iter_mut() {
                let proj = q.dot(r);
                r.axpy(-proj, &q, 1.0);
            }
            rss = updated;
            for (k, col) in cols.iter_mut().enumerate() {
                if active[k] {
                    let proj = q.dot(col);
                    col.axpy(-proj, &q, 1.0);
                }
            }
        }
    }
    Ok(SearchPath { ranking, mean_kl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projpred::projection::project_submodel;
    use crate::refmodel::Basis;
    use crate::rng;
    use crate::stats::std_normal;

    /// Reference whose draws are `f = X w + small jitter`, with the given scale.
    fn reference_from(x: &DMatrix<f64>, w: &[f64], s: usize, seed: u64) -> ReferenceFit {
        let mut r = rng::stream(seed, 1);
        let p = x.ncols();
        let betas = DMatrix::from_fn(s, p, |_, j| w[j] + 0.02 * std_normal(&mut r));
        ReferenceFit::from_draws(
            Basis::Identity { n_features: p },
            vec![0.3; s],
            betas,
            vec![1.0; s],
            x,
        )
        .unwrap()
    }

    fn design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 0);
        DMatrix::from_fn(n, p, |_, _| std_normal(&mut r))
    }

    #[test]
    fn dominant_variable_ranked_first() {
        let x = design(60, 6, 1);
        let mut w = vec![0.0; 6];
        w[3] = 2.0;
        w[1] = 0.2;
        let reference = reference_from(&x, &w, 40, 2);
        let ranking = forward_search(&reference, &x, 3).unwrap();
        assert_eq!(ranking[0], 3);
    }

    #[test]
    fn zero_size_search_is_empty() {
        let x = design(10, 3, 1);
        let reference = reference_from(&x, &[1.0, 0.0, 0.0], 10, 1);
        assert!(forward_search(&reference, &x, 0).unwrap().is_empty());
    }

    #[test]
    fn kl_is_nonincreasing_and_matches_direct_projection() {
        let x = design(40, 8, 3);
        let w = [0.5, -1.0, 0.0, 0.3, 0.0, 0.8, 0.1, 0.0];
        let reference = reference_from(&x, &w, 30, 4);
        let all: Vec<usize> = (0..8).collect();
        let path = forward_search_in(&reference, &x, &all, 8, 30).unwrap();
        for pair in path.mean_kl.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        for size in 0..=8 {
            let proj = project_submodel(&reference, &x, &path.ranking[..size], None).unwrap();
            assert!((proj.mean_kl() - path.mean_kl[size]).abs() < 1e-8 * (1.0 + proj.mean_kl()));
        }
    }

    #[test]
    fn duplicated_column_adds_nothing_once_its_twin_is_in() {
        let mut x = design(50, 4, 5);
        let twin = x.column(0).into_owned();
        x = x.insert_column(4, 0.0);
        x.set_column(4, &twin);
        let w = [1.5, 0.0, 0.4, 0.0, 0.0];
        let reference = reference_from(&x, &w, 20, 6);
        let all: Vec<usize> = (0..5).collect();
        let path = forward_search_in(&reference, &x, &all, 5, 20).unwrap();
        let first = path.ranking.iter().position(|&j| j == 0 || j == 4).unwrap();
        let second = path
            .ranking
            .iter()
            .rposition(|&j| j == 0 || j == 4)
            .unwrap();
        assert_eq!(first, 0);
        assert!(second > first);
        let gain = path.mean_kl[second] - path.mean_kl[second + 1];
        assert!(gain.abs() < 1e-9, "{gain}");
    }

    #[test]
    fn restricted_candidates_only() {
        let x = design(30, 6, 7);
        let reference = reference_from(&x, &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0], 10, 8);
        let path = forward_search_in(&reference, &x, &[3, 4, 5], 6, 10).unwrap();
        let mut got = path.ranking.clone();
        got.sort_unstable();
        assert_eq!(got, vec![3, 4, 5]);
    }
}
