//! Units of work, resumable persistence and the per-unit method runner.
//!
//! A unit is one (scenario, replication) pair. Every method and filter
//! variant of a unit runs on the same data and reference fit; the unit's
//! records are appended to `records.jsonl` in one write, so a unit is either
//! fully persisted or rerun.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use refsel_core::baselines::{bayes_stepwise, lasso_cv, steplm, BayesStepConfig, LassoConfig, StepConfig};
use refsel_core::datagen::{augment_with_noise, bootstrap_indices, gen_latent_regression, Dataset, GenConfig};
use refsel_core::iterative::{iterative_lasso, iterative_projpred_with, IterativeConfig};
use refsel_core::metrics;
use refsel_core::normalmeans::{
    ci90_select, ebayes_median_select, filter_problem, fisher_problem, locfdr_select, Ci90Config, LocfdrConfig,
    NormalMeansProblem, SigmaRule,
};
use refsel_core::projpred::{kfold_assignment, select_among, BaselineChoice, ProjpredConfig};
use refsel_core::refmodel::{predictive_means, ReferenceBuilder, ReferenceFit};
use refsel_core::rng;

use crate::config::{ExperimentConfig, Method, Preset};
use crate::error::BenchError;
use crate::plotdata;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CONFIG_ECHO_FILE: &str = "effective_config.toml";
pub const VARIABLES_FILE: &str = "variables.csv";

/// Outcome of one method on one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub p: usize,
    pub k: Option<usize>,
    pub method: Method,
    pub filtered: bool,
    pub replication: usize,
    pub seed: u64,
    pub selected: Vec<usize>,
    pub metrics: BTreeMap<String, f64>,
    pub wall_ms: u64,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn label(&self) -> String {
        self.method.label(self.filtered)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Ordering key: scenario coordinates, then method, variant, replication.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.n
            .cmp(&other.n)
            .then(self.rho.unwrap_or(-1.0).total_cmp(&other.rho.unwrap_or(-1.0)))
            .then(self.p.cmp(&other.p))
            .then(self.k.cmp(&other.k))
            .then(self.scenario.cmp(&other.scenario))
            .then(self.method.cmp(&other.method))
            .then(self.filtered.cmp(&other.filtered))
            .then(self.replication.cmp(&other.replication))
    }
}

enum Source {
    Sim { n: usize, p: usize, k: usize, rho: f64 },
    /// Repeated K-fold CV: replication `r * folds + f` holds out fold `f`
    /// of plan `r`.
    Folds { data: Arc<Dataset>, folds: usize },
    Bootstrap { data: Arc<Dataset> },
}

pub struct Scenario {
    pub key: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub p: usize,
    pub k: Option<usize>,
    pub replications: usize,
    pub column_names: Vec<String>,
    source: Source,
}

/// Training data, optional held-out rows and the relevance mask.
struct UnitData {
    train: Dataset,
    test: Option<Dataset>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Scenario {
    fn seed(&self, master: u64, replication: usize) -> u64 {
        rng::derive(rng::derive(master, fnv1a(&self.key)), replication as u64)
    }

    fn data(&self, cfg: &ExperimentConfig, replication: usize, seed: u64, need_test: bool) -> Result<UnitData, String> {
        match &self.source {
            Source::Sim { n, p, k, rho } => {
                let extra = if need_test { cfg.n_test } else { 0 };
                let all = gen_latent_regression(&GenConfig {
                    n: n + extra,
                    p: *p,
                    k: *k,
                    rho: *rho,
                    seed: rng::derive(seed, 1),
                })
                .map_err(|e| e.to_string())?;
                let train = all.take_rows(&(0..*n).collect::<Vec<_>>());
                let test = need_test.then(|| all.take_rows(&(*n..n + extra).collect::<Vec<_>>()));
                Ok(UnitData { train, test })
            }
            Source::Folds { data, folds } => {
                let (plan, fold) = (replication / folds, replication % folds);
                let a = kfold_assignment(data.n(), *folds, rng::derive(cfg.seed, 0xf01d + plan as u64))
                    .map_err(|e| e.to_string())?;
                let pick = |hold: bool| (0..data.n()).filter(|&i| (a[i] == fold) == hold).collect::<Vec<_>>();
                Ok(UnitData {
                    train: data.take_rows(&pick(false)),
                    test: Some(data.take_rows(&pick(true))),
                })
            }
            Source::Bootstrap { data } => {
                let (train, oob) = bootstrap_indices(data.n(), rng::derive(seed, 1));
                Ok(UnitData {
                    train: data.take_rows(&train),
                    test: (!oob.is_empty()).then(|| data.take_rows(&oob)),
                })
            }
        }
    }
}

fn load_bodyfat(cfg: &ExperimentConfig) -> Result<Dataset, BenchError> {
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| BenchError::Config("data.path: required".into()))?;
    if !path.is_file() {
        return Err(BenchError::Data(format!("data file {} not found", path.display())));
    }
    Dataset::from_csv(path, &cfg.data.target, &cfg.data.drop)
        .map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))
}

fn with_noise(cfg: &ExperimentConfig, d: &Dataset) -> Result<Dataset, BenchError> {
    augment_with_noise(d, cfg.data.noise_p, rng::derive(cfg.seed, 0xb0d7))
        .map_err(|e| BenchError::Config(format!("data.noise_p: {e}")))
}

fn data_scenario(key: String, d: Dataset, replications: usize, source: impl FnOnce(Arc<Dataset>) -> Source) -> Scenario {
    let (n, p) = (d.n(), d.p());
    let names = d.column_names.clone();
    let k = d.relevant.as_ref().map(|m| m.iter().filter(|v| **v).count());
    Scenario {
        key,
        n,
        rho: None,
        p,
        k,
        replications,
        column_names: names,
        source: source(Arc::new(d)),
    }
}

/// The scenarios of an experiment, in canonical order.
pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<Scenario>, BenchError> {
    let folds = cfg.data.folds;
    let noise_key = format!("noise{}", cfg.data.noise_p);
    Ok(match cfg.preset {
        Preset::Bodyfat1 => {
            let d = load_bodyfat(cfg)?;
            let noisy = with_noise(cfg, &d)?;
            let reps = cfg.replications * folds;
            vec![
                data_scenario("original".into(), d, reps, |data| Source::Folds { data, folds }),
                data_scenario(noise_key, noisy, reps, |data| Source::Folds { data, folds }),
            ]
        }
        Preset::Bodyfat2 => {
            let noisy = with_noise(cfg, &load_bodyfat(cfg)?)?;
            vec![data_scenario(noise_key, noisy, cfg.replications, |data| Source::Bootstrap { data })]
        }
        Preset::Bodyfat3 => {
            let d = load_bodyfat(cfg)?;
            vec![data_scenario("original".into(), d, cfg.replications, |data| Source::Bootstrap { data })]
        }
        Preset::Sim1 | Preset::Sim2 | Preset::Custom => {
            let g = &cfg.grid;
            let mut out = Vec::new();
            for &n in &g.n {
                for &rho in &g.rho {
                    for &p in &g.p {
                        for &k in g.k.iter().filter(|&&k| k <= p) {
                            out.push(Scenario {
                                key: format!("n{n}_rho{rho}_p{p}_k{k}"),
                                n,
                                rho: Some(rho),
                                p,
                                k: Some(k),
                                replications: cfg.replications,
                                column_names: (1..=p).map(|j| format!("x{j}")).collect(),
                                source: Source::Sim { n, p, k, rho },
                            });
                        }
                    }
                }
            }
            out
        }
    })
}

fn expected_records(cfg: &ExperimentConfig) -> usize {
    cfg.methods.iter().map(|m| m.variants(&cfg.filters).len()).sum()
}

struct Outcome {
    selected: Vec<usize>,
    prediction: Option<DVector<f64>>,
}

fn selected_only(selected: Vec<usize>) -> Outcome {
    Outcome {
        selected,
        prediction: None,
    }
}

fn projpred_cfg(cfg: &ExperimentConfig, seed: u64) -> ProjpredConfig {
    let mut pc = cfg.projpred_config(seed);
    pc.reference = pc.reference.with_mcmc(cfg.mcmc_config(seed));
    pc
}

fn normal_means(train: &Dataset, reference: Option<&ReferenceFit>) -> refsel_core::Result<NormalMeansProblem> {
    let raw = fisher_problem(&train.x, &train.y, SigmaRule::default())?;
    match reference {
        Some(r) => filter_problem(&raw, r, &train.x),
        None => Ok(raw),
    }
}

fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    filtered: bool,
    data: &UnitData,
    reference: Option<&ReferenceFit>,
    seed: u64,
) -> refsel_core::Result<Outcome> {
    let d = &data.train;
    let predict_x = data.test.as_ref().map(|t| &t.x);
    let filter_ref = if filtered { reference } else { None };
    let need_ref = || reference.ok_or_else(|| refsel_core::Error::Estimation("reference fit unavailable".into()));
    Ok(match method {
        Method::Reference => {
            let r = need_ref()?;
            Outcome {
                selected: (0..d.p()).collect(),
                prediction: predict_x.map(|x| predictive_means(r, x)).transpose()?,
            }
        }
        Method::Projpred => {
            let all: Vec<usize> = (0..d.p()).collect();
            let res = select_among(d, need_ref()?, None, &all, &projpred_cfg(cfg, seed), BaselineChoice::Reference)?;
            Outcome {
                prediction: predict_x.map(|x| res.predict(x)),
                selected: res.chosen_idx,
            }
        }
        Method::Steplm => {
            let sc = StepConfig {
                use_reference: filtered,
                ..StepConfig::default()
            };
            let res = steplm(d, &sc, filter_ref)?;
            Outcome {
                prediction: predict_x.map(|x| res.predict(x)),
                selected: res.selected,
            }
        }
        Method::BayesStep => {
            let bc = BayesStepConfig {
                use_reference: filtered,
                seed,
                ..BayesStepConfig::default()
            };
            let res = bayes_stepwise(d, &bc, filter_ref)?;
            Outcome {
                prediction: predict_x.map(|x| res.predict(x)).transpose()?,
                selected: res.selected,
            }
        }
        Method::Lasso => {
            let lc = LassoConfig {
                use_reference: filtered,
                seed,
                ..LassoConfig::default()
            };
            let fit = lasso_cv(d, &lc, filter_ref)?;
            Outcome {
                prediction: predict_x.map(|x| fit.predict(x)),
                selected: fit.active,
            }
        }
        Method::IterProjpred | Method::IterLasso => {
            let mut pc = projpred_cfg(cfg, seed);
            pc.search_in_folds = true;
            let ic = IterativeConfig {
                projpred: pc,
                lasso: LassoConfig {
                    seed,
                    ..LassoConfig::default()
                },
                ..IterativeConfig::default()
            };
            let state = if method == Method::IterProjpred {
                iterative_projpred_with(d, need_ref()?, &ic)?
            } else {
                iterative_lasso(d, &ic)?
            };
            let mut s = state.selected;
            s.sort_unstable();
            selected_only(s)
        }
        Method::Locfdr => selected_only(locfdr_select(&normal_means(d, filter_ref)?, &LocfdrConfig::default())?.selected),
        Method::EbMedian => selected_only(ebayes_median_select(&normal_means(d, filter_ref)?)?.selected),
        Method::Ci90 => {
            let cc = Ci90Config::default();
            let cc = Ci90Config {
                mcmc: cc.mcmc.with_seed(seed),
                ..cc
            };
            selected_only(ci90_select(&normal_means(d, filter_ref)?, &cc)?.selected)
        }
    })
}

fn outcome_metrics(o: &Outcome, data: &UnitData) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("n_selected".to_string(), o.selected.len() as f64);
    if let Some(rel) = &data.train.relevant {
        m.insert("n_noisy".into(), o.selected.iter().filter(|&&j| !rel[j]).count() as f64);
        if let Ok(v) = metrics::fdr(&o.selected, rel) {
            m.insert("fdr".into(), v);
        }
        if let Ok(v) = metrics::sensitivity(&o.selected, rel) {
            m.insert("sensitivity".into(), v);
        }
    }
    if let (Some(pred), Some(test)) = (&o.prediction, &data.test) {
        let sse: f64 = pred.iter().zip(test.y.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        m.insert("sse".into(), sse);
        m.insert("n_test".into(), test.n() as f64);
        if let Ok(v) = metrics::rmse(test.y.as_slice(), pred.as_slice()) {
            m.insert("rmse".into(), v);
        }
    }
    m
}

/// Every method and variant on one unit. Failures become records with an
/// error message.
fn run_unit(cfg: &ExperimentConfig, sc: &Scenario, replication: usize) -> Vec<RunRecord> {
    let seed = sc.seed(cfg.seed, replication);
    let runs: Vec<(Method, bool)> = cfg
        .methods
        .iter()
        .flat_map(|&m| m.variants(&cfg.filters).into_iter().map(move |f| (m, f)))
        .collect();
    let need_test = runs
        .iter()
        .any(|(m, _)| !matches!(m, Method::Locfdr | Method::EbMedian | Method::Ci90 | Method::IterProjpred | Method::IterLasso));
    let need_ref = runs.iter().any(|&(m, f)| m.needs_reference(f));

    let record = |method: Method, filtered: bool, start: Instant, res: Result<(Vec<usize>, BTreeMap<String, f64>), String>| {
        let (selected, metrics, error) = match res {
            Ok((s, m)) => (s, m, None),
            Err(e) => (Vec::new(), BTreeMap::new(), Some(e)),
        };
        RunRecord {
            scenario: sc.key.clone(),
            n: sc.n,
            rho: sc.rho,
            p: sc.p,
            k: sc.k,
            method,
            filtered,
            replication,
            seed,
            selected,
            metrics,
            wall_ms: start.elapsed().as_millis() as u64,
            error,
        }
    };

    let start = Instant::now();
    let data = match sc.data(cfg, replication, seed, need_test) {
        Ok(d) => d,
        Err(e) => {
            return runs
                .iter()
                .map(|&(m, f)| record(m, f, start, Err(format!("data: {e}"))))
                .collect()
        }
    };
    let reference = if need_ref {
        cfg.reference_spec()
            .with_mcmc(cfg.mcmc_config(rng::derive(seed, 2)))
            .build(&data.train.x, &data.train.y, rng::derive(seed, 2))
            .map_err(|e| format!("reference: {e}"))
    } else {
        Err("reference not built".into())
    };
    if let Err(e) = &reference {
        if need_ref {
            log::warn!("{} rep {replication}: {e}", sc.key);
        }
    }

    runs.iter()
        .map(|&(m, f)| {
            let start = Instant::now();
            let ref_ok = reference.as_ref().ok();
            let res = if m.needs_reference(f) && ref_ok.is_none() {
                Err(reference.as_ref().err().cloned().unwrap_or_default())
            } else {
                let mseed = rng::derive(seed, 0x100 + 2 * m as u64 + f as u64);
                run_method(cfg, m, f, &data, ref_ok, mseed)
                    .map(|o| {
                        let metrics = outcome_metrics(&o, &data);
                        (o.selected, metrics)
                    })
                    .map_err(|e| e.to_string())
            };
            if let Err(e) = &res {
                log::warn!("{} rep {replication} {}: {e}", sc.key, m.label(f));
            }
            record(m, f, start, res)
        })
        .collect()
}

/// Parse a records file. A final line without a newline that fails to parse
/// is a write cut short and is ignored; any other bad line is a data error.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("ignoring truncated final line of {}", path.display());
            }
            Err(e) => return Err(BenchError::Data(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

fn write_records(path: &Path, records: &[RunRecord]) -> Result<(), BenchError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn write_variables(path: &Path, scenarios: &[Scenario]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::Io(e.into()))?;
    w.write_record(["scenario", "index", "name"]).map_err(|e| BenchError::Io(e.into()))?;
    for sc in scenarios {
        for (j, name) in sc.column_names.iter().enumerate() {
            w.write_record([sc.key.as_str(), &j.to_string(), name])
                .map_err(|e| BenchError::Io(e.into()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Comparable form of a config: worker count and output location do not
/// affect results.
fn result_identity(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.jobs = 1;
    c.out = PathBuf::new();
    c.to_toml()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub out: PathBuf,
    pub units_total: usize,
    pub units_run: usize,
    pub units_resumed: usize,
    pub failed_records: usize,
    pub files: Vec<PathBuf>,
}

/// Run every unit not yet persisted in `cfg.out`, then rewrite the
/// aggregates from the full set of records.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, BenchError> {
    run_experiment_limited(cfg, None)
}

/// As [`run_experiment`], stopping after `limit` new units (used to
/// exercise resumption).
pub fn run_experiment_limited(cfg: &ExperimentConfig, limit: Option<usize>) -> Result<RunSummary, BenchError> {
    cfg.validate()?;
    let scenarios = plan(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let echo = cfg.out.join(CONFIG_ECHO_FILE);
    if let Ok(prev) = fs::read_to_string(&echo) {
        let prev: ExperimentConfig =
            toml::from_str(&prev).map_err(|e| BenchError::Config(format!("{}: {e}", echo.display())))?;
        if result_identity(&prev) != result_identity(cfg) {
            return Err(BenchError::Config(format!(
                "{} holds results of a different configuration; choose another output directory",
                cfg.out.display()
            )));
        }
    }
    fs::write(&echo, cfg.to_toml())?;
    write_variables(&cfg.out.join(VARIABLES_FILE), &scenarios)?;

    // Keep the records of fully persisted units only.
    let records_path = cfg.out.join(RECORDS_FILE);
    let existing = read_records(&records_path)?;
    let per_unit = expected_records(cfg);
    let mut counts: HashMap<(String, usize), usize> = HashMap::new();
    for r in &existing {
        *counts.entry((r.scenario.clone(), r.replication)).or_default() += 1;
    }
    let planned: HashMap<&str, usize> = scenarios.iter().map(|s| (s.key.as_str(), s.replications)).collect();
    let is_done = |key: &(String, usize)| {
        counts.get(key) == Some(&per_unit) && planned.get(key.0.as_str()).is_some_and(|&reps| key.1 < reps)
    };
    let kept: Vec<RunRecord> = existing
        .iter()
        .filter(|r| is_done(&(r.scenario.clone(), r.replication)))
        .cloned()
        .collect();
    // Rewritten even when nothing was dropped, to shed a truncated tail.
    write_records(&records_path, &kept)?;

    let mut todo: Vec<(usize, usize)> = Vec::new();
    let mut resumed = 0;
    for (si, sc) in scenarios.iter().enumerate() {
        for rep in 0..sc.replications {
            if is_done(&(sc.key.clone(), rep)) {
                resumed += 1;
            } else {
                todo.push((si, rep));
            }
        }
    }
    let units_total = todo.len() + resumed;
    if let Some(l) = limit {
        todo.truncate(l);
    }
    log::info!("{units_total} units, {resumed} already done, running {}", todo.len());

    let writer = Mutex::new(OpenOptions::new().append(true).open(&records_path)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| BenchError::Config(format!("jobs: {e}")))?;
    let failed = Mutex::new(0usize);
    pool.install(|| {
        todo.par_iter().try_for_each(|&(si, rep)| -> Result<(), BenchError> {
            let sc = &scenarios[si];
            let t = Instant::now();
            let recs = run_unit(cfg, sc, rep);
            let mut buf = Vec::new();
            for r in &recs {
                serde_json::to_writer(&mut buf, r).map_err(std::io::Error::other)?;
                buf.push(b'\n');
            }
            *failed.lock().unwrap() += recs.iter().filter(|r| r.error.is_some()).count();
            let mut f = writer.lock().unwrap();
            f.write_all(&buf)?;
            f.flush()?;
            log::info!("{} rep {rep} done in {:.1}s", sc.key, t.elapsed().as_secs_f64());
            Ok(())
        })
    })?;
    drop(writer);

    let files = plotdata::write_aggregates(&cfg.out, cfg.stability_conf, cfg.preset.figures())?;
    Ok(RunSummary {
        out: cfg.out.clone(),
        units_total,
        units_run: todo.len(),
        units_resumed: resumed,
        failed_records: failed.into_inner().unwrap(),
        files,
    })
}
