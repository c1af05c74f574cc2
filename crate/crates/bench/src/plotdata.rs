//! Aggregate tables and plot-ready CSVs, computed from persisted records
//! only so that they can be regenerated at any time.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use refsel_core::metrics::{self, MetricRow, SelectionMatrix};

use crate::error::BenchError;
use crate::run::{read_records, RunRecord, RECORDS_FILE, VARIABLES_FILE};

pub const FIGURES: &[&str] = &["rmse_vs_fdr", "sensitivity_vs_fdr", "entropy", "stability", "inclusion"];

pub const METRICS_FILE: &str = "metrics.csv";
pub const INCLUSION_FILE: &str = "inclusion.csv";

const SUMMARY_METRICS: &[&str] = &["n_selected", "n_noisy", "fdr", "sensitivity", "rmse"];

/// Records of one (scenario, method, variant), successful runs only.
pub struct Group<'a> {
    pub first: &'a RunRecord,
    pub runs: Vec<&'a RunRecord>,
    pub failures: usize,
}

impl Group<'_> {
    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.metric(metric)).collect()
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        let v = self.values(metric);
        (!v.is_empty()).then(|| metrics::mean_se(&v).0)
    }

    /// Sample standard deviation across replications.
    pub fn sd(&self, metric: &str) -> Option<f64> {
        let v = self.values(metric);
        if v.len() < 2 {
            return None;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
    }

    pub fn selection_matrix(&self) -> Result<SelectionMatrix, BenchError> {
        let mut s = SelectionMatrix::new(self.first.p);
        for r in &self.runs {
            s.push(r.replication.to_string(), &r.selected)?;
        }
        Ok(s)
    }

    /// RMSE pooled over all held-out rows, as in cross-validation.
    pub fn pooled_rmse(&self) -> Option<f64> {
        let sse: f64 = self.values("sse").iter().sum();
        let n: f64 = self.values("n_test").iter().sum();
        (n > 0.0).then(|| (sse / n).sqrt())
    }
}

/// Sort records canonically and group them.
pub fn group_records(records: &mut [RunRecord]) -> Vec<Group<'_>> {
    records.sort_by(|a, b| a.canonical_cmp(b));
    let mut out: Vec<Group> = Vec::new();
    for r in records.iter() {
        let same = out
            .last()
            .is_some_and(|g| g.first.scenario == r.scenario && g.first.method == r.method && g.first.filtered == r.filtered);
        if !same {
            out.push(Group {
                first: r,
                runs: Vec::new(),
                failures: 0,
            });
        }
        let g = out.last_mut().unwrap();
        if r.error.is_some() {
            g.failures += 1;
        } else {
            g.runs.push(r);
        }
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, BenchError> {
    csv::Writer::from_path(path).map_err(|e| BenchError::Io(e.into()))
}

fn csv_err(e: csv::Error) -> BenchError {
    BenchError::Io(e.into())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metric_rows(groups: &[Group], conf: f64) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for g in groups {
        let row = |metric: &str, estimate: f64, lo: Option<f64>, hi: Option<f64>| MetricRow {
            scenario: g.first.scenario.clone(),
            method: g.first.method.name().to_string(),
            filtered: g.first.filtered,
            metric: metric.to_string(),
            estimate,
            se_or_ci_lo: lo,
            ci_hi: hi,
        };
        rows.push(row("runs", g.runs.len() as f64, None, None));
        if g.failures > 0 {
            rows.push(row("failures", g.failures as f64, None, None));
        }
        for m in SUMMARY_METRICS {
            let v = g.values(m);
            if !v.is_empty() {
                let (mean, se) = metrics::mean_se(&v);
                rows.push(row(m, mean, se.is_finite().then_some(se), None));
            }
        }
        if let Some(v) = g.pooled_rmse() {
            rows.push(row("pooled_rmse", v, None, None));
        }
        if g.runs.is_empty() {
            continue;
        }
        if let Ok(s) = g.selection_matrix() {
            if let Ok(e) = metrics::inclusion_entropy(&s) {
                rows.push(row("entropy", e, None, None));
            }
            match metrics::stability(&s, conf) {
                Ok(st) => rows.push(row("stability", st.raw, Some(st.lo), Some(st.hi))),
                Err(e) => log::debug!("{} {}: {e}", g.first.scenario, g.first.label()),
            }
        }
    }
    rows
}

fn variable_names(dir: &Path) -> HashMap<(String, usize), String> {
    let mut out = HashMap::new();
    let Ok(mut r) = csv::Reader::from_path(dir.join(VARIABLES_FILE)) else {
        return out;
    };
    for rec in r.records().flatten() {
        if let (Some(s), Some(Ok(j)), Some(name)) = (rec.get(0), rec.get(1).map(str::parse), rec.get(2)) {
            out.insert((s.to_string(), j), name.to_string());
        }
    }
    out
}

fn rho_str(r: &RunRecord) -> String {
    opt(r.rho)
}

/// Write one figure's CSV for the given (already grouped) records.
fn write_figure(path: &Path, figure: &str, groups: &[Group], conf: f64, names: &HashMap<(String, usize), String>) -> Result<(), BenchError> {
    let mut w = csv_writer(path)?;
    let header: &[&str] = match figure {
        "rmse_vs_fdr" => &["fdr", "rmse", "method", "n", "rho", "se"],
        "sensitivity_vs_fdr" => &["fdr", "sensitivity", "method", "n", "rho", "fdr_sd", "sensitivity_sd"],
        "entropy" => &["scenario", "method", "n", "rho", "entropy"],
        "stability" => &["scenario", "method", "n", "rho", "stability", "lo", "hi"],
        "inclusion" => &["scenario", "method", "variable", "frequency"],
        other => {
            return Err(BenchError::Config(format!(
                "unknown figure '{other}'; expected one of {}",
                FIGURES.join(", ")
            )))
        }
    };
    w.write_record(header).map_err(csv_err)?;
    for g in groups.iter().filter(|g| !g.runs.is_empty()) {
        let r = g.first;
        let (label, n, rho) = (r.label(), r.n.to_string(), rho_str(r));
        match figure {
            "rmse_vs_fdr" => {
                let Some(rmse) = g.mean("rmse") else { continue };
                w.write_record([opt(g.mean("fdr")), rmse.to_string(), label, n, rho, opt(g.sd("rmse"))])
                    .map_err(csv_err)?;
            }
            "sensitivity_vs_fdr" => {
                let (Some(f), Some(s)) = (g.mean("fdr"), g.mean("sensitivity")) else { continue };
                w.write_record([f.to_string(), s.to_string(), label, n, rho, opt(g.sd("fdr")), opt(g.sd("sensitivity"))])
                    .map_err(csv_err)?;
            }
            "entropy" => {
                let e = metrics::inclusion_entropy(&g.selection_matrix()?)?;
                w.write_record([r.scenario.clone(), label, n, rho, e.to_string()]).map_err(csv_err)?;
            }
            "stability" => {
                let Ok(st) = metrics::stability(&g.selection_matrix()?, conf) else { continue };
                w.write_record([r.scenario.clone(), label, n, rho, st.raw.to_string(), st.lo.to_string(), st.hi.to_string()])
                    .map_err(csv_err)?;
            }
            _ => {
                let s = g.selection_matrix()?;
                let runs = s.runs() as f64;
                for (j, c) in s.column_counts().into_iter().enumerate() {
                    let name = names.get(&(r.scenario.clone(), j)).cloned().unwrap_or_else(|| j.to_string());
                    w.write_record([r.scenario.clone(), label.clone(), name, (c as f64 / runs).to_string()])
                        .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn figure_path(dir: &Path, figure: &str) -> PathBuf {
    dir.join(format!("plot_{figure}.csv"))
}

/// Write `plot_<figure>.csv` into `dir` from the records found there. An
/// empty or missing record set yields a header-only file.
pub fn emit_plotdata(dir: &Path, figure: &str) -> Result<PathBuf, BenchError> {
    if !FIGURES.contains(&figure) {
        return Err(BenchError::Config(format!(
            "unknown figure '{figure}'; expected one of {}",
            FIGURES.join(", ")
        )));
    }
    if !dir.is_dir() {
        return Err(BenchError::Data(format!("{} is not a results directory", dir.display())));
    }
    let mut records = read_records(&dir.join(RECORDS_FILE))?;
    let conf = stability_conf(dir);
    let groups = group_records(&mut records);
    let path = figure_path(dir, figure);
    write_figure(&path, figure, &groups, conf, &variable_names(dir))?;
    Ok(path)
}

fn stability_conf(dir: &Path) -> f64 {
    std::fs::read_to_string(dir.join(crate::run::CONFIG_ECHO_FILE))
        .ok()
        .and_then(|t| toml::from_str::<crate::config::ExperimentConfig>(&t).ok())
        .map(|c| c.stability_conf)
        .unwrap_or(0.95)
}

/// `metrics.csv`, `inclusion.csv` and the listed figures.
pub fn write_aggregates(dir: &Path, conf: f64, figures: &[&str]) -> Result<Vec<PathBuf>, BenchError> {
    let mut records = read_records(&dir.join(RECORDS_FILE))?;
    let groups = group_records(&mut records);
    let names = variable_names(dir);
    let mut files = Vec::new();

    let path = dir.join(METRICS_FILE);
    metrics::write_metric_table(File::create(&path)?, &metric_rows(&groups, conf))?;
    files.push(path);

    let path = dir.join(INCLUSION_FILE);
    write_figure(&path, "inclusion", &groups, conf, &names)?;
    files.push(path);

    for f in figures {
        let path = figure_path(dir, f);
        write_figure(&path, f, &groups, conf, &names)?;
        files.push(path);
    }
    Ok(files)
}
