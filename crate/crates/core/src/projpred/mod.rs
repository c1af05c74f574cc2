//! Projection predictive selection of a minimal predictive subset.
//!
//! The reference posterior is projected draw by draw onto Gaussian linear
//! submodels, variables are ranked by forward search, the out-of-sample
//! utility of each ranking prefix is estimated, and the smallest prefix whose
//! utility is close enough to the baseline is returned.

pub mod projection;
pub mod search;
pub mod utility;

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{config, Result};
use crate::refmodel::{ReferenceBuilder, ReferenceFit, ReferenceSpec};

pub use projection::{project_draw, project_submodel, thinned_draws, DrawProjection, SubmodelProjection};
pub use search::{forward_search, forward_search_in, SearchPath};
pub use utility::{
    cv_reference_lpd, estimate_utility_cv, estimate_utility_cv_searched, estimate_utility_kfold, estimate_utility_tis_loo, kfold_assignment,
    prob_not_worse, select_size, Baseline, BaselineChoice, CvReferences, SizeDecision, SizeUtility,
    UtilityPath,
};

/// How the out-of-sample utility of each submodel size is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityMethod {
    /// K-fold cross-validation with a reference refit per fold.
    KFold { k: usize },
    /// Truncated importance-sampling LOO on the full-data reference.
    TisLoo,
}

impl Default for UtilityMethod {
    fn default() -> Self {
        UtilityMethod::KFold { k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjpredConfig {
    pub reference: ReferenceSpec,
    pub alpha: f64,
    pub utility: UtilityMethod,
    /// Longest ranking explored; `None` means `min(p, n - 2, 30)`.
    pub max_size: Option<usize>,
    /// Reference draws used during the search.
    pub search_draws: usize,
    /// Repeat the search inside every fold when the utility is
    /// cross-validated. Without it the held-out rows have already influenced
    /// the ranking and the utility of large submodels is optimistic.
    pub search_in_folds: bool,
    pub seed: u64,
}

impl Default for ProjpredConfig {
    fn default() -> Self {
        ProjpredConfig {
            reference: ReferenceSpec::spc_default(),
            alpha: 0.16,
            utility: UtilityMethod::default(),
            max_size: None,
            search_draws: 20,
            search_in_folds: false,
            seed: 0,
        }
    }
}

impl ProjpredConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if let UtilityMethod::KFold { k } = self.utility {
            if k < 2 {
                return Err(config(format!("K = {k}: at least two folds required")));
            }
        }
        if self.search_draws == 0 {
            return Err(config("search_draws must be positive"));
        }
        Ok(())
    }

    pub fn max_size_for(&self, n: usize, p: usize) -> usize {
        self.max_size
            .unwrap_or_else(|| default_max_size(n, p))
            .min(p)
    }
}

pub fn default_max_size(n: usize, p: usize) -> usize {
    p.min(n.saturating_sub(2)).min(30)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub ranking: Vec<usize>,
    pub chosen_size: usize,
    /// The first `chosen_size` entries of `ranking`.
    pub chosen_idx: Vec<usize>,
    pub utility: UtilityPath,
    pub alpha: f64,
    /// `false` when no explored size met the rule.
    pub qualified: bool,
    /// Projection of the full-data reference onto the chosen submodel.
    pub projection: SubmodelProjection,
}

impl SelectionResult {
    /// Point predictions of the chosen submodel: the mean over projected
    /// draws.
    pub fn predict(&self, x_new: &nalgebra::DMatrix<f64>) -> DVector<f64> {
        self.projection.mean_draws_for(x_new).row_mean().transpose()
    }

    /// One row per explored size: `size, elpd, se_diff_to_baseline,
    /// added_variable` (empty for size 0).
    pub fn write_csv<W: Write>(&self, out: W, names: Option<&[String]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["size", "elpd", "se_diff_to_baseline", "added_variable"])?;
        for s in &self.utility.sizes {
            let added = match s.size {
                0 => String::new(),
                k => {
                    let j = self.ranking[k - 1];
                    names.and_then(|n| n.get(j).cloned()).unwrap_or_else(|| j.to_string())
                }
            };
            w.write_record([
                s.size.to_string(),
                s.elpd.to_string(),
                s.se_diff.to_string(),
                added,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Search, utility and size decision over `candidates` given a full-data
/// reference. `cv` supplies the fold refits when utility is cross-validated.
pub fn select_among(
    d: &Dataset,
    reference: &ReferenceFit,
    cv: Option<&CvReferences>,
    candidates: &[usize],
    cfg: &ProjpredConfig,
    baseline: BaselineChoice,
) -> Result<SelectionResult> {
    let max_size = cfg.max_size_for(d.n(), candidates.len());
    let path = forward_search_in(reference, &d.x, candidates, max_size, cfg.search_draws)?;
    let ranking = path.ranking;
    let kfold = |cv: &CvReferences| {
        if cfg.search_in_folds {
            estimate_utility_cv_searched(&d.x, &d.y, candidates, ranking.len(), cfg.search_draws, cv, baseline)
        } else {
            estimate_utility_cv(&d.x, &d.y, &ranking, cv, baseline)
        }
    };
    let utility = match (cfg.utility, cv) {
        (UtilityMethod::TisLoo, _) => estimate_utility_tis_loo(&d.x, &d.y, &ranking, reference, baseline)?,
        (UtilityMethod::KFold { .. }, Some(cv)) => kfold(cv)?,
        (UtilityMethod::KFold { k }, None) => kfold(&CvReferences::build(&d.x, &d.y, k, &cfg.reference, cfg.seed)?)?,
    };
    let decision = select_size(&utility, cfg.alpha);
    let chosen_idx = ranking[..decision.size].to_vec();
    if !decision.qualified {
        log::warn!(
            "no submodel up to size {} reached the utility threshold",
            decision.size
        );
    }
    let projection = project_submodel(reference, &d.x, &chosen_idx, None)?;
    Ok(SelectionResult {
        ranking,
        chosen_size: decision.size,
        chosen_idx,
        utility,
        alpha: cfg.alpha,
        qualified: decision.qualified,
        projection,
    })
}

/// Fit the reference on all data, rank every variable, estimate the utility
/// of each prefix and pick the smallest one close to the reference.
pub fn projpred_select(d: &Dataset, cfg: &ProjpredConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    d.check()?;
    let reference = cfg.reference.build(&d.x, &d.y, cfg.seed)?;
    let all: Vec<usize> = (0..d.p()).collect();
    select_among(d, &reference, None, &all, cfg, BaselineChoice::Reference)
}
