//! Classical selectors, each runnable on the observed target or on a
//! reference model's predictive means.

pub mod bayes;
pub mod lasso;
pub mod ols;
pub mod steplm;

use std::io::Write;

use crate::error::Result;

pub use bayes::{bayes_pvalue, bayes_stepwise, BayesStepConfig, BayesStepResult, PValue};
pub use lasso::{kkt_violation, lambda_max, lasso_cv, lasso_cv_xy, LassoConfig, LassoFit};
pub use ols::{aic, ols_fit, OlsFit};
pub use steplm::{steplm, Direction, StepConfig, StepResult};

/// One selected set to be written out.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSet {
    pub run_id: String,
    pub method: String,
    pub selected: Vec<usize>,
}

/// Long-format CSV `run_id, method, variable, included` with one row per
/// variable and set.
pub fn write_selected_sets<W: Write>(out: W, sets: &[SelectedSet], names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "method", "variable", "included"])?;
    for s in sets {
        for (j, name) in names.iter().enumerate() {
            let inc = if s.selected.contains(&j) { "1" } else { "0" };
            w.write_record([s.run_id.as_str(), s.method.as_str(), name.as_str(), inc])?;
        }
    }
    w.flush()?;
    Ok(())
}
