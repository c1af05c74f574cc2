//! Prediction and selection-quality metrics.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::norm_quantile;

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Input("rmse of empty vectors".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!("{} targets, {} predictions", y_true.len(), y_pred.len())));
    }
    let mse = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y_true.len() as f64;
    Ok(mse.sqrt())
}

fn is_relevant(relevant: &[bool], j: usize) -> Result<bool> {
    relevant
        .get(j)
        .copied()
        .ok_or_else(|| Error::Dimension(format!("selected index {j} beyond relevance mask of length {}", relevant.len())))
}

/// Fraction of selected variables that are not relevant; 0 for an empty
/// selection.
pub fn fdr(selected: &[usize], relevant: &[bool]) -> Result<f64> {
    if selected.is_empty() {
        return Ok(0.0);
    }
    let mut false_hits = 0;
    for &j in selected {
        if !is_relevant(relevant, j)? {
            false_hits += 1;
        }
    }
    Ok(false_hits as f64 / selected.len() as f64)
}

pub fn sensitivity(selected: &[usize], relevant: &[bool]) -> Result<f64> {
    let total = relevant.iter().filter(|r| **r).count();
    if total == 0 {
        return Err(Error::UndefinedMetric("sensitivity with no relevant variables".into()));
    }
    let mut hits = 0;
    for &j in selected {
        if is_relevant(relevant, j)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Runs × variables inclusion indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    rows: Vec<Vec<bool>>,
    p: usize,
    pub labels: Vec<String>,
    pub relevant: Option<Vec<bool>>,
}

impl SelectionMatrix {
    pub fn new(p: usize) -> Self {
        SelectionMatrix {
            rows: Vec::new(),
            p,
            labels: Vec::new(),
            relevant: None,
        }
    }

    pub fn from_sets(p: usize, sets: &[Vec<usize>]) -> Result<Self> {
        let mut m = SelectionMatrix::new(p);
        for (i, s) in sets.iter().enumerate() {
            m.push(i.to_string(), s)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, label: impl Into<String>, selected: &[usize]) -> Result<()> {
        let mut row = vec![false; self.p];
        for &j in selected {
            *row.get_mut(j)
                .ok_or_else(|| Error::Dimension(format!("index {j} with p = {}", self.p)))? = true;
        }
        self.rows.push(row);
        self.labels.push(label.into());
        Ok(())
    }

    pub fn runs(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    pub fn column_counts(&self) -> Vec<usize> {
        (0..self.p).map(|j| self.rows.iter().filter(|r| r[j]).count()).collect()
    }

    fn row_sizes(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.iter().filter(|v| **v).count()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    /// Over variables, weighted by how often each is included.
    #[default]
    Inclusion,
    /// Over the distinct selected sets.
    SetFrequency,
}

fn entropy_of(counts: impl Iterator<Item = usize>) -> f64 {
    let counts: Vec<f64> = counts.filter(|c| *c > 0).map(|c| c as f64).collect();
    let total: f64 = counts.iter().sum();
    -counts.iter().map(|c| c / total * (c / total).ln()).sum::<f64>()
}

pub fn inclusion_entropy(s: &SelectionMatrix) -> Result<f64> {
    entropy(s, EntropyKind::Inclusion)
}

pub fn entropy(s: &SelectionMatrix, kind: EntropyKind) -> Result<f64> {
    match kind {
        EntropyKind::Inclusion => {
            let counts = s.column_counts();
            if counts.iter().all(|c| *c == 0) {
                return Err(Error::UndefinedMetric("entropy of a matrix with no inclusions".into()));
            }
            Ok(entropy_of(counts.into_iter()))
        }
        EntropyKind::SetFrequency => {
            if s.runs() == 0 {
                return Err(Error::UndefinedMetric("entropy of zero runs".into()));
            }
            let mut freq: HashMap<&[bool], usize> = HashMap::new();
            for r in &s.rows {
                *freq.entry(r.as_slice()).or_default() += 1;
            }
            Ok(entropy_of(freq.into_values()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    /// Unclipped estimate; can be negative.
    pub raw: f64,
    pub variance: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Stability {
    /// Estimate clipped to [0, 1] for display.
    pub fn clipped(&self) -> f64 {
        self.raw.clamp(0.0, 1.0)
    }
}

/// Stability coefficient with an asymptotic normal confidence interval at
/// level `conf`.
pub fn stability(s: &SelectionMatrix, conf: f64) -> Result<Stability> {
    let m = s.runs();
    if m < 2 {
        return Err(Error::UndefinedMetric(format!("stability needs at least 2 runs, got {m}")));
    }
    if !(conf > 0.0 && conf < 1.0) {
        return Err(Error::Input(format!("confidence level {conf} outside (0, 1)")));
    }
    let (mf, pf) = (m as f64, s.p as f64);
    let freq: Vec<f64> = s.column_counts().iter().map(|&c| c as f64 / mf).collect();
    let sizes: Vec<f64> = s.row_sizes().iter().map(|&k| k as f64).collect();
    let kbar: f64 = freq.iter().sum();
    let denom = kbar / pf * (1.0 - kbar / pf);
    if !(denom > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "average selection size {kbar} leaves the stability denominator at zero"
        )));
    }
    let mean_var = mf / (mf - 1.0) * freq.iter().map(|q| q * (1.0 - q)).sum::<f64>() / pf;
    let raw = 1.0 - mean_var / denom;

    let phi: Vec<f64> = (0..m)
        .map(|i| {
            let overlap = (0..s.p).filter(|&j| s.rows[i][j]).map(|j| freq[j]).sum::<f64>() / pf;
            let k = sizes[i];
            (overlap - k * kbar / (pf * pf)
                + raw / 2.0 * (2.0 * k * kbar / (pf * pf) - k / pf - kbar / pf + 1.0))
                / denom
        })
        .collect();
    let phi_mean = phi.iter().sum::<f64>() / mf;
    let variance = 4.0 / (mf * mf) * phi.iter().map(|v| (v - phi_mean).powi(2)).sum::<f64>();
    let half = norm_quantile(0.5 + conf / 2.0) * variance.sqrt();
    if raw < 0.0 {
        log::info!("stability estimate {raw:.4} is negative; reported as 0 when clipped");
    }
    Ok(Stability {
        raw,
        variance,
        lo: raw - half,
        hi: raw + half,
    })
}

/// One line of a metric table. `se_or_ci_lo`/`ci_hi` hold either a standard
/// error (with `ci_hi` empty) or interval bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub method: String,
    pub filtered: bool,
    pub metric: String,
    pub estimate: f64,
    pub se_or_ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

pub fn write_metric_table<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["scenario", "method", "filtered", "metric", "estimate", "se_or_ci_lo", "ci_hi"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
