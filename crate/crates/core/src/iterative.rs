//! Complete variable selection by repeated minimal-subset selection.
//!
//! Each iteration selects a minimal subset among the variables not yet
//! chosen, moves it to the result and repeats until the empty model is
//! chosen. The reference model is fit once, before the loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baselines::{lasso_cv_xy, LassoConfig};
use crate::datagen::Dataset;
use crate::error::{config, Result};
use crate::linalg;
use crate::projpred::{select_among, BaselineChoice, CvReferences, ProjpredConfig, SelectionResult, UtilityMethod};
use crate::refmodel::{ReferenceBuilder, ReferenceFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterativeConfig {
    pub projpred: ProjpredConfig,
    pub lasso: LassoConfig,
    pub max_iters: usize,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        IterativeConfig {
            // The best explored submodel is the baseline here, so any
            // optimism in the utility of large submodels keeps the loop going.
            projpred: ProjpredConfig {
                search_in_folds: true,
                ..ProjpredConfig::default()
            },
            lasso: LassoConfig::default(),
            max_iters: 20,
        }
    }
}

impl IterativeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(config("max_iters must be at least 1"));
        }
        self.projpred.validate()?;
        self.lasso.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub variables_added: Vec<usize>,
    /// Utility of the baseline the size rule compared against (projpred only).
    pub baseline_elpd: Option<f64>,
    pub chosen_size: usize,
}

/// Loop state, returned once the loop ends.
#[derive(Debug, Clone, PartialEq)]
pub struct IterState {
    /// Candidates not yet selected, in increasing order.
    pub remaining: Vec<usize>,
    /// Selected variables in the order they were added.
    pub selected: Vec<usize>,
    pub iteration: usize,
    pub log: Vec<IterationLog>,
    /// Per-iteration projection results (empty for the lasso variant).
    pub selections: Vec<SelectionResult>,
    /// The loop hit `max_iters` while still selecting variables.
    pub exhausted: bool,
}

impl IterState {
    fn new(p: usize) -> Self {
        IterState {
            remaining: (0..p).collect(),
            selected: Vec::new(),
            iteration: 0,
            log: Vec::new(),
            selections: Vec::new(),
            exhausted: false,
        }
    }

    /// Record one iteration; returns `false` when the loop should stop.
    fn advance(&mut self, added: Vec<usize>, baseline_elpd: Option<f64>, max_iters: usize) -> bool {
        self.iteration += 1;
        self.log.push(IterationLog {
            iteration: self.iteration,
            chosen_size: added.len(),
            variables_added: added.clone(),
            baseline_elpd,
        });
        if added.is_empty() {
            return false;
        }
        self.remaining.retain(|j| !added.contains(j));
        self.selected.extend(added);
        if self.iteration >= max_iters && !self.remaining.is_empty() {
            self.exhausted = true;
            log::warn!("iteration cap {max_iters} reached with variables still being selected");
            return false;
        }
        !self.remaining.is_empty()
    }

    /// `iteration, variables_added, baseline_elpd, chosen_size`, with the added
    /// variables joined by `;`.
    pub fn write_log_csv<W: Write>(&self, out: W, names: Option<&[String]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "variables_added", "baseline_elpd", "chosen_size"])?;
        for l in &self.log {
            let added: Vec<String> = l
                .variables_added
                .iter()
                .map(|&j| names.and_then(|n| n.get(j).cloned()).unwrap_or_else(|| j.to_string()))
                .collect();
            w.write_record([
                l.iteration.to_string(),
                added.join(";"),
                l.baseline_elpd.map(|v| v.to_string()).unwrap_or_default(),
                l.chosen_size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Iterated projection predictive selection. The baseline of each
/// iteration's size rule is the best submodel explored in that iteration.
pub fn iterative_projpred(d: &Dataset, cfg: &IterativeConfig) -> Result<IterState> {
    cfg.validate()?;
    d.check()?;
    let pc = &cfg.projpred;
    let reference = pc.reference.build(&d.x, &d.y, pc.seed)?;
    iterative_projpred_with(d, &reference, cfg)
}

/// As [`iterative_projpred`], with a reference already fit to `d`.
pub fn iterative_projpred_with(d: &Dataset, reference: &ReferenceFit, cfg: &IterativeConfig) -> Result<IterState> {
    cfg.validate()?;
    let pc = &cfg.projpred;
    let cv = match pc.utility {
        UtilityMethod::KFold { k } => Some(CvReferences::build(&d.x, &d.y, k, &pc.reference, pc.seed)?),
        UtilityMethod::TisLoo => None,
    };
    let mut state = IterState::new(d.p());
    loop {
        let res = select_among(d, reference, cv.as_ref(), &state.remaining, pc, BaselineChoice::BestExplored)?;
        let added = res.chosen_idx.clone();
        let base = res.utility.baseline_elpd();
        state.selections.push(res);
        if !state.advance(added, Some(base), cfg.max_iters) {
            break;
        }
    }
    Ok(state)
}

/// The same loop with the cross-validated lasso support on the remaining
/// variables as the inner selector, fit to the observed target.
pub fn iterative_lasso(d: &Dataset, cfg: &IterativeConfig) -> Result<IterState> {
    cfg.validate()?;
    d.check()?;
    let mut state = IterState::new(d.p());
    loop {
        let x = linalg::columns(&d.x, &state.remaining);
        let fit = lasso_cv_xy(&x, &d.y, &cfg.lasso)?;
        let added: Vec<usize> = fit.active.iter().map(|&a| state.remaining[a]).collect();
        if !state.advance(added, None, cfg.max_iters) {
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_latent_regression, GenConfig};
    use crate::refmodel::{McmcConfig, ReferenceSpec};
    use crate::rng;
    use crate::stats::std_normal;
    use nalgebra::{DMatrix, DVector};

    fn quick(seed: u64) -> IterativeConfig {
        IterativeConfig {
            projpred: ProjpredConfig {
                reference: ReferenceSpec::spc_default().with_mcmc(McmcConfig {
                    warmup: 300,
                    draws: 400,
                    keep: 200,
                    seed,
                }),
                utility: UtilityMethod::KFold { k: 5 },
                search_in_folds: true,
                seed,
                ..ProjpredConfig::default()
            },
            ..IterativeConfig::default()
        }
    }

    fn check_partition(s: &IterState, p: usize) {
        let mut all: Vec<usize> = s.selected.iter().chain(&s.remaining).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..p).collect::<Vec<_>>());
    }

    #[test]
    fn pure_noise_stops_in_first_iteration() {
        let d = gen_latent_regression(&GenConfig {
            n: 80,
            p: 20,
            k: 0,
            rho: 0.0,
            seed: 3,
        })
        .unwrap();
        let s = iterative_projpred(&d, &quick(3)).unwrap();
        assert_eq!(s.iteration, 1);
        assert!(s.selected.is_empty());
        check_partition(&s, 20);
    }

    #[test]
    fn duplicated_relevant_column_is_picked_up_later() {
        let n = 100;
        let mut r = rng::stream(4, 0);
        let mut x = DMatrix::from_fn(n, 6, |_, _| std_normal(&mut r));
        let y = DVector::from_fn(n, |i, _| 1.5 * x[(i, 0)] + std_normal(&mut r));
        let dup = x.column(0).into_owned();
        x.set_column(1, &dup);
        let d = Dataset::new(x, y, (0..6).map(|j| format!("v{j}")).collect()).unwrap();
        let s = iterative_projpred(&d, &quick(4)).unwrap();
        assert_eq!(s.log[0].variables_added, vec![0]);
        assert!(s.selected.contains(&1));
        let first = s.log.iter().position(|l| l.variables_added.contains(&1)).unwrap();
        assert!(first >= 1);
        // Without column 0 the best explored submodel of the second iteration
        // relies on its copy.
        assert_eq!(s.selections[1].ranking[0], 1);
        let second = &s.selections[1].utility;
        assert!(s.log[1].baseline_elpd.unwrap() > second.sizes[0].elpd + 10.0);
        check_partition(&s, 6);
    }

    #[test]
    fn lasso_single_strong_predictor() {
        let n = 80;
        let mut r = rng::stream(5, 0);
        let x = DMatrix::from_fn(n, 10, |_, _| std_normal(&mut r));
        let y = DVector::from_fn(n, |i, _| 3.0 * x[(i, 4)] + 0.5 * std_normal(&mut r));
        let d = Dataset::new(x, y, (0..10).map(|j| format!("v{j}")).collect()).unwrap();
        let s = iterative_lasso(&d, &IterativeConfig::default()).unwrap();
        assert_eq!(s.log[0].variables_added, vec![4]);
        assert_eq!(s.iteration, 2);
        assert_eq!(s.selected, vec![4]);
    }

    #[test]
    fn iteration_cap_is_flagged() {
        let d = gen_latent_regression(&GenConfig {
            n: 60,
            p: 30,
            k: 15,
            rho: 0.5,
            seed: 6,
        })
        .unwrap();
        let cfg = IterativeConfig {
            max_iters: 1,
            ..IterativeConfig::default()
        };
        let s = iterative_lasso(&d, &cfg).unwrap();
        assert_eq!(s.iteration, 1);
        assert!(s.exhausted);
        let mut buf = Vec::new();
        s.write_log_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,variables_added,baseline_elpd,chosen_size\n1,"));
    }
}
