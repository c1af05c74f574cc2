//! Supervised principal components: univariate screening followed by PCA of
//! the standardized screened block.

use nalgebra::{DMatrix, DVector};

use crate::error::{config, Error, Result};
use crate::linalg;
use crate::stats::pearson;

#[derive(Debug, Clone, PartialEq)]
pub struct SpcBasis {
    /// Retained columns of the original design.
    pub screened_idx: Vec<usize>,
    /// screened × c loading matrix (orthonormal columns).
    pub loadings: DMatrix<f64>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// n × c component scores on the training rows.
    pub scores: DMatrix<f64>,
    /// Sample standard deviation of the leading component.
    pub s_max: f64,
}

impl SpcBasis {
    pub fn n_components(&self) -> usize {
        self.loadings.ncols()
    }

    /// Component scores for new rows of the full design.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let block = linalg::columns(x, &self.screened_idx);
        linalg::standardize_with(&block, &self.center, &self.scale) * &self.loadings
    }
}

/// Absolute correlation of every column with `y`; `None` for constant columns.
pub fn screening_scores(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<Option<f64>> {
    x.column_iter()
        .map(|c| pearson(c.iter(), y.iter()).map(f64::abs))
        .collect()
}

/// Screen columns by `|cor(x_j, y)| >= threshold_ratio * max_j |cor(x_j, y)|`
/// and take the leading `n_components` principal directions of the
/// standardized survivors.
pub fn screen_and_spc(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    n_components: usize,
    threshold_ratio: f64,
) -> Result<SpcBasis> {
    if n_components < 1 {
        return Err(config("n_components must be at least 1"));
    }
    if !(0.0..=1.0).contains(&threshold_ratio) {
        return Err(config(format!(
            "threshold_ratio = {threshold_ratio} must lie in [0, 1]"
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "X has {} rows, y has {}",
            x.nrows(),
            y.len()
        )));
    }
    let scores = screening_scores(x, y);
    let constant = scores.iter().filter(|s| s.is_none()).count();
    if constant > 0 {
        log::warn!("{constant} constant column(s) excluded from screening");
    }
    let max = scores
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NoScreenableColumns);
    }
    let cut = threshold_ratio * max * (1.0 - 1e-12);
    let screened_idx: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter_map(|(j, s)| s.filter(|v| *v >= cut).map(|_| j))
        .collect();

    let block = linalg::columns(x, &screened_idx);
    let (center, scale) = linalg::column_moments(&block);
    let z = linalg::standardize_with(&block, &center, &scale);
    let n = z.nrows();

    let svd = z.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[order[0]];
    let usable: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > 1e-10 * top.max(f64::MIN_POSITIVE))
        .take(n_components)
        .collect();
    if usable.is_empty() {
        return Err(Error::NoScreenableColumns);
    }
    let mut loadings = DMatrix::zeros(screened_idx.len(), usable.len());
    for (c, &i) in usable.iter().enumerate() {
        let mut v = v_t.row(i).transpose();
        // Fix the sign so the largest-magnitude loading is positive.
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        loadings.set_column(c, &v);
    }
    let comp = &z * &loadings;
    let first = comp.column(0);
    let s_max = (first.iter().map(|v| v * v).sum::<f64>() / (n.max(2) - 1) as f64).sqrt();
    Ok(SpcBasis {
        screened_idx,
        loadings,
        center,
        scale,
        scores: comp,
        s_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_latent_regression, GenConfig};
    use crate::rng;

    fn data() -> (DMatrix<f64>, DVector<f64>) {
        let d = gen_latent_regression(&GenConfig {
            n: 60,
            p: 40,
            k: 10,
            rho: 0.4,
            seed: 3,
        })
        .unwrap();
        (d.x, d.y)
    }

    #[test]
    fn zero_threshold_is_plain_pca() {
        let (x, y) = data();
        let b = screen_and_spc(&x, &y, 5, 0.0).unwrap();
        assert_eq!(b.screened_idx.len(), 40);
        assert_eq!(b.n_components(), 5);
    }

    #[test]
    fn unit_threshold_keeps_only_the_maximizer() {
        let (x, y) = data();
        let b = screen_and_spc(&x, &y, 5, 1.0).unwrap();
        let s = screening_scores(&x, &y);
        let best = (0..40)
            .max_by(|&a, &b| s[a].unwrap().total_cmp(&s[b].unwrap()))
            .unwrap();
        assert_eq!(b.screened_idx, vec![best]);
        assert_eq!(b.n_components(), 1);
    }

    #[test]
    fn components_are_orthogonal_and_reproducible() {
        let (x, y) = data();
        let b = screen_and_spc(&x, &y, 5, 0.6).unwrap();
        let gram = b.scores.transpose() * &b.scores;
        let scale = gram.diagonal().max();
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                if i != j {
                    assert!(gram[(i, j)].abs() < 1e-8 * scale);
                }
            }
        }
        assert!((b.project(&x) - &b.scores).abs().max() < 1e-10);
        assert!(b.s_max > 0.0);
    }

    #[test]
    fn leading_direction_matches_power_iteration() {
        let (x, y) = data();
        let b = screen_and_spc(&x, &y, 3, 0.3).unwrap();
        let block = linalg::columns(&x, &b.screened_idx);
        let z = linalg::standardize_with(&block, &b.center, &b.scale);
        let cov = z.transpose() * &z;
        let mut r = rng::stream(1, 0);
        let mut v = DVector::from_fn(cov.nrows(), |_, _| crate::stats::std_normal(&mut r));
        for _ in 0..5000 {
            v = &cov * &v;
            v /= v.norm();
        }
        let cos = v.dot(&b.loadings.column(0)).abs();
        assert!(cos > 1.0 - 1e-8, "{cos}");
    }

    #[test]
    fn all_constant_columns_error() {
        let x = DMatrix::from_element(10, 3, 1.0);
        let y = DVector::from_fn(10, |i, _| i as f64);
        assert!(matches!(
            screen_and_spc(&x, &y, 2, 0.5),
            Err(Error::NoScreenableColumns)
        ));
    }

    #[test]
    fn rejects_bad_arguments() {
        let (x, y) = data();
        assert!(screen_and_spc(&x, &y, 0, 0.5).is_err());
        assert!(screen_and_spc(&x, &y, 2, 1.5).is_err());
    }
}
