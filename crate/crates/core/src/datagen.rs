//! Synthetic latent-factor data, noise augmentation, resampling and CSV ingestion.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::linalg;
use crate::rng;
use crate::stats::std_normal;

/// Parameters of the latent-factor generator.
///
/// The target is a noisy view of a latent `f ~ N(0, 1)`; the first `k`
/// predictors are noisy views of `f` with pairwise correlation `rho`, the rest
/// are independent noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub rho: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(config("n must be at least 1"));
        }
        if self.k > self.p {
            return Err(config(format!("k = {} exceeds p = {}", self.k, self.p)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(config(format!("rho = {} must lie in [0, 1)", self.rho)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub latent_f: Option<DVector<f64>>,
    /// `true` for variables known to carry signal.
    pub relevant: Option<Vec<bool>>,
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, column_names: Vec<String>) -> Result<Self> {
        let d = Dataset {
            x,
            y,
            latent_f: None,
            relevant: None,
            column_names,
        };
        d.check()?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Verify dimensions agree and every value is finite.
    pub fn check(&self) -> Result<()> {
        let (n, p) = self.x.shape();
        if self.y.len() != n {
            return Err(Error::Dimension(format!(
                "y has {} rows but X has {n}",
                self.y.len()
            )));
        }
        if self.column_names.len() != p {
            return Err(Error::Dimension(format!(
                "{} column names for {p} columns",
                self.column_names.len()
            )));
        }
        if let Some(f) = &self.latent_f {
            if f.len() != n {
                return Err(Error::Dimension("latent_f length differs from n".into()));
            }
        }
        if let Some(mask) = &self.relevant {
            if mask.len() != p {
                return Err(Error::Dimension("relevance mask length differs from p".into()));
            }
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    /// Rows `idx` (with repetition allowed) as a new dataset.
    pub fn take_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: linalg::rows(&self.x, idx),
            y: linalg::select(&self.y, idx),
            latent_f: self.latent_f.as_ref().map(|f| linalg::select(f, idx)),
            relevant: self.relevant.clone(),
            column_names: self.column_names.clone(),
        }
    }

    /// Columns `idx` as a new dataset; the relevance mask follows the columns.
    pub fn take_columns(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: linalg::columns(&self.x, idx),
            y: self.y.clone(),
            latent_f: self.latent_f.clone(),
            relevant: self
                .relevant
                .as_ref()
                .map(|m| idx.iter().map(|&j| m[j]).collect()),
            column_names: idx.iter().map(|&j| self.column_names[j].clone()).collect(),
        }
    }

    /// Same predictors with a replaced target (used for reference filtering).
    pub fn with_target(&self, y: DVector<f64>) -> Result<Dataset> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "replacement target has {} rows, expected {}",
                y.len(),
                self.n()
            )));
        }
        Ok(Dataset {
            y,
            ..self.clone()
        })
    }

    /// Index of a column by name.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Read a numeric CSV with a header row. `target` names the response
    /// column; columns listed in `drop` are ignored; every other column becomes
    /// a predictor.
    pub fn from_csv(path: impl AsRef<Path>, target: &str, drop: &[String]) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let target_col = headers
            .iter()
            .position(|h| h == target)
            .ok_or_else(|| Error::Input(format!("target column '{target}' not found")))?;
        let predictor_cols: Vec<usize> = (0..headers.len())
            .filter(|&j| j != target_col && !drop.contains(&headers[j]))
            .collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    Error::Input(format!(
                        "row {}: column '{}' is not numeric: '{raw}'",
                        line + 2,
                        headers[j]
                    ))
                })
            };
            ys.push(parse(target_col)?);
            for &j in &predictor_cols {
                xs.push(parse(j)?);
            }
        }
        let n = ys.len();
        if n == 0 {
            return Err(Error::Input("CSV has no data rows".into()));
        }
        let x = DMatrix::from_row_slice(n, predictor_cols.len(), &xs);
        let names = predictor_cols.iter().map(|&j| headers[j].clone()).collect();
        Dataset::new(x, DVector::from_vec(ys), names)
    }
}

/// Draw a dataset from the latent-factor model.
pub fn gen_latent_regression(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let GenConfig { n, p, k, rho, seed } = *cfg;
    let mut rng = rng::stream(seed, 0);
    let a = rho.sqrt();
    let b = (1.0 - rho).sqrt();
    let mut f = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let fi = std_normal(&mut rng);
        f[i] = fi;
        y[i] = fi + std_normal(&mut rng);
        for j in 0..p {
            let e = std_normal(&mut rng);
            x[(i, j)] = if j < k { a * fi + b * e } else { e };
        }
    }
    Ok(Dataset {
        x,
        y,
        latent_f: Some(f),
        relevant: Some((0..p).map(|j| j < k).collect()),
        column_names: (1..=p).map(|j| format!("x{j}")).collect(),
    })
}

/// Append standard-normal noise columns until there are `total_p` predictors.
pub fn augment_with_noise(d: &Dataset, total_p: usize, seed: u64) -> Result<Dataset> {
    let p = d.p();
    if total_p <= p {
        return Err(config(format!(
            "total_p = {total_p} must exceed the current {p} columns"
        )));
    }
    let n = d.n();
    let extra = total_p - p;
    let mut rng = rng::stream(seed, 1);
    let mut x = DMatrix::zeros(n, total_p);
    x.view_mut((0, 0), (n, p)).copy_from(&d.x);
    // Column-major fill so that column j only depends on the seed and j.
    for j in p..total_p {
        for i in 0..n {
            x[(i, j)] = std_normal(&mut rng);
        }
    }
    let mut relevant = d.relevant.clone().unwrap_or_else(|| vec![true; p]);
    relevant.extend(std::iter::repeat_n(false, extra));
    let mut names = d.column_names.clone();
    names.extend((1..=extra).map(|j| format!("noise{j}")));
    Ok(Dataset {
        x,
        y: d.y.clone(),
        latent_f: d.latent_f.clone(),
        relevant: Some(relevant),
        column_names: names,
    })
}

/// Row indices of a bootstrap draw and the rows never drawn (sorted).
pub fn bootstrap_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::stream(seed, 2);
    let mut seen = vec![false; n];
    let train: Vec<usize> = (0..n)
        .map(|_| {
            let i = rng.random_range(0..n);
            seen[i] = true;
            i
        })
        .collect();
    let oob = (0..n).filter(|&i| !seen[i]).collect();
    (train, oob)
}

/// Bootstrap resample plus its out-of-bag complement.
pub fn bootstrap_sample(d: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if d.n() == 0 {
        return Err(Error::Input("cannot bootstrap an empty dataset".into()));
    }
    let (train, oob) = bootstrap_indices(d.n(), seed);
    Ok((d.take_rows(&train), d.take_rows(&oob)))
}

/// `m` rows drawn with replacement.
pub fn subsample(d: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    if m < 1 {
        return Err(config("subsample size must be at least 1"));
    }
    if d.n() == 0 {
        return Err(Error::Input("cannot subsample an empty dataset".into()));
    }
    let mut rng = rng::stream(seed, 3);
    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..d.n())).collect();
    Ok(d.take_rows(&idx))
}
