//! Experiment configuration: presets, the TOML file format and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use refsel_core::projpred::{ProjpredConfig, UtilityMethod};
use refsel_core::refmodel::{McmcConfig, ReferenceSpec};

use crate::error::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 10-fold CV of projpred and steplm on body fat, with and without noise columns.
    Bodyfat1,
    /// Bootstrap comparison of steplm with and without the reference filter.
    Bodyfat2,
    /// Bootstrap inclusion frequencies on the original body-fat data.
    Bodyfat3,
    /// Minimal-subset simulation, p = 70, k = 20.
    Sim1,
    /// Complete-selection simulation, p = 1000, k = 100, n = 70, rho = 0.3.
    Sim2,
    /// Simulation grid from the config file only.
    Custom,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        write!(f, "{}", s.as_str().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Predictions of the reference model itself (selects every column).
    Reference,
    Projpred,
    Steplm,
    BayesStep,
    Lasso,
    IterProjpred,
    IterLasso,
    Locfdr,
    EbMedian,
    Ci90,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Reference => "reference",
            Method::Projpred => "projpred",
            Method::Steplm => "steplm",
            Method::BayesStep => "bayes_step",
            Method::Lasso => "lasso",
            Method::IterProjpred => "iter_projpred",
            Method::IterLasso => "iter_lasso",
            Method::Locfdr => "locfdr",
            Method::EbMedian => "eb_median",
            Method::Ci90 => "ci90",
        }
    }

    /// Filter settings the method runs under, given the requested ones.
    /// Methods built on the reference posterior always count as filtered.
    pub fn variants(self, filters: &[bool]) -> Vec<bool> {
        match self {
            Method::Reference | Method::Projpred | Method::IterProjpred => vec![true],
            Method::IterLasso => vec![false],
            _ => filters.to_vec(),
        }
    }

    /// Label used in plot data: `steplm` or `steplm_ref`.
    pub fn label(self, filtered: bool) -> String {
        if filtered && !matches!(self, Method::Reference | Method::Projpred | Method::IterProjpred) {
            format!("{}_ref", self.name())
        } else {
            self.name().to_string()
        }
    }

    pub fn needs_reference(self, filtered: bool) -> bool {
        filtered || matches!(self, Method::Reference | Method::Projpred | Method::IterProjpred)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Spc,
    Horseshoe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Kfold,
    TisLoo,
}

/// The config file as written: every key optional, unknown keys rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub replications: Option<usize>,
    pub scale: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub alpha: Option<f64>,
    pub methods: Option<Vec<Method>>,
    pub filters: Option<Vec<bool>>,
    pub n_test: Option<usize>,
    pub reference: Option<ReferenceKind>,
    pub utility: Option<UtilityKind>,
    pub stability_conf: Option<f64>,
    #[serde(default)]
    pub grid: GridFile,
    #[serde(default)]
    pub data: DataFile,
    #[serde(default)]
    pub mcmc: McmcFile,
    #[serde(default)]
    pub projpred: ProjpredFile,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub n: Option<Vec<usize>>,
    pub rho: Option<Vec<f64>>,
    pub p: Option<Vec<usize>>,
    pub k: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFile {
    pub path: Option<PathBuf>,
    pub target: Option<String>,
    pub drop: Option<Vec<String>>,
    pub noise_p: Option<usize>,
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcFile {
    pub warmup: Option<usize>,
    pub draws: Option<usize>,
    pub keep: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjpredFile {
    pub k_folds: Option<usize>,
    pub search_draws: Option<usize>,
    pub max_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: Vec<usize>,
    pub rho: Vec<f64>,
    pub p: Vec<usize>,
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: Option<PathBuf>,
    pub target: String,
    pub drop: Vec<String>,
    /// Total column count after appending noise columns.
    pub noise_p: usize,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mcmc {
    pub warmup: usize,
    pub draws: usize,
    pub keep: usize,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Replications after scaling.
    pub replications: usize,
    pub scale: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub filters: Vec<bool>,
    pub n_test: usize,
    pub reference: ReferenceKind,
    pub utility: UtilityKind,
    pub stability_conf: f64,
    pub grid: Grid,
    pub data: DataSource,
    pub mcmc: Mcmc,
    pub projpred_k_folds: usize,
    pub search_draws: usize,
    pub max_size: Option<usize>,
}

pub const DEFAULT_REPLICATIONS: usize = 100;
pub const DEFAULT_ALPHA: f64 = 0.16;

struct PresetDefaults {
    methods: Vec<Method>,
    grid: Grid,
    reference: ReferenceKind,
    utility: UtilityKind,
    replications: usize,
}

fn preset_defaults(preset: Preset) -> PresetDefaults {
    use Method::*;
    let sim = |methods, n: Vec<usize>, rho, p, k| PresetDefaults {
        methods,
        grid: Grid { n, rho, p: vec![p], k: vec![k] },
        reference: ReferenceKind::Spc,
        utility: UtilityKind::Kfold,
        replications: DEFAULT_REPLICATIONS,
    };
    let bodyfat = |methods, replications| PresetDefaults {
        methods,
        grid: Grid {
            n: vec![],
            rho: vec![],
            p: vec![],
            k: vec![],
        },
        reference: ReferenceKind::Horseshoe,
        utility: UtilityKind::TisLoo,
        replications,
    };
    match preset {
        Preset::Sim1 => sim(vec![Projpred, Steplm, BayesStep], vec![100, 200, 400], vec![0.3, 0.5], 70, 20),
        Preset::Sim2 => sim(
            vec![Locfdr, EbMedian, Ci90, IterProjpred, IterLasso],
            vec![70],
            vec![0.3],
            1000,
            100,
        ),
        Preset::Custom => sim(vec![Projpred, Steplm, Lasso], vec![100], vec![0.5], 50, 10),
        // One CV pass; the folds are the replications.
        Preset::Bodyfat1 => bodyfat(vec![Reference, Projpred, Steplm], 1),
        Preset::Bodyfat2 => bodyfat(vec![Steplm], DEFAULT_REPLICATIONS),
        Preset::Bodyfat3 => bodyfat(vec![Projpred, Steplm], DEFAULT_REPLICATIONS),
    }
}

impl Preset {
    pub fn is_bodyfat(self) -> bool {
        matches!(self, Preset::Bodyfat1 | Preset::Bodyfat2 | Preset::Bodyfat3)
    }

    /// Plot-data figures emitted after a run.
    pub fn figures(self) -> &'static [&'static str] {
        match self {
            Preset::Sim1 | Preset::Custom => &["rmse_vs_fdr", "entropy", "stability"],
            Preset::Sim2 => &["sensitivity_vs_fdr", "stability", "entropy"],
            Preset::Bodyfat1 | Preset::Bodyfat2 => &["rmse_vs_fdr"],
            Preset::Bodyfat3 => &["entropy", "stability"],
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub scale: Option<f64>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

fn bad(field: &str, msg: impl fmt::Display) -> BenchError {
    BenchError::Config(format!("{field}: {msg}"))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn resolve(self, ov: &Overrides, base_dir: &Path) -> Result<ExperimentConfig, BenchError> {
        let preset = ov.preset.or(self.preset).unwrap_or(Preset::Custom);
        let d = preset_defaults(preset);
        let scale = ov.scale.or(self.scale).unwrap_or(1.0);
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(bad("scale", format!("{scale} must be positive")));
        }
        let base_reps = self.replications.unwrap_or(d.replications);
        if base_reps == 0 {
            return Err(bad("replications", "must be at least 1"));
        }
        let replications = ((base_reps as f64 * scale).round() as usize).max(1);
        let grid = Grid {
            n: self.grid.n.unwrap_or(d.grid.n),
            rho: self.grid.rho.unwrap_or(d.grid.rho),
            p: self.grid.p.unwrap_or(d.grid.p),
            k: self.grid.k.unwrap_or(d.grid.k),
        };
        let data_path = self.data.path.map(|p| if p.is_relative() { base_dir.join(p) } else { p });
        let cfg = ExperimentConfig {
            preset,
            replications,
            scale,
            seed: ov.seed.or(self.seed).unwrap_or(1),
            out: ov
                .out
                .clone()
                .or(self.out)
                .unwrap_or_else(|| PathBuf::from(format!("results/{preset}"))),
            jobs: ov.jobs.or(self.jobs).unwrap_or(1),
            alpha: self.alpha.unwrap_or(DEFAULT_ALPHA),
            methods: self.methods.unwrap_or(d.methods),
            filters: self.filters.unwrap_or_else(|| vec![false, true]),
            n_test: self.n_test.unwrap_or(1000),
            reference: self.reference.unwrap_or(d.reference),
            utility: self.utility.unwrap_or(d.utility),
            stability_conf: self.stability_conf.unwrap_or(0.95),
            grid,
            data: DataSource {
                path: data_path,
                target: self.data.target.unwrap_or_else(|| "siri".into()),
                drop: self
                    .data
                    .drop
                    .unwrap_or_else(|| vec!["idno".into(), "brozek".into(), "density".into()]),
                noise_p: self.data.noise_p.unwrap_or(100),
                folds: self.data.folds.unwrap_or(10),
            },
            mcmc: Mcmc {
                warmup: self.mcmc.warmup.unwrap_or(1000),
                draws: self.mcmc.draws.unwrap_or(1000),
                keep: self.mcmc.keep.unwrap_or(400),
            },
            projpred_k_folds: self.projpred.k_folds.unwrap_or(10),
            search_draws: self.projpred.search_draws.unwrap_or(20),
            max_size: self.projpred.max_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.replications == 0 {
            return Err(bad("replications", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(bad("methods", "must not be empty"));
        }
        if self.filters.is_empty() {
            return Err(bad("filters", "must not be empty"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("alpha", format!("{} must lie in (0, 1)", self.alpha)));
        }
        if !(self.stability_conf > 0.0 && self.stability_conf < 1.0) {
            return Err(bad("stability_conf", format!("{} must lie in (0, 1)", self.stability_conf)));
        }
        if self.jobs == 0 {
            return Err(bad("jobs", "must be at least 1"));
        }
        if self.mcmc.draws == 0 || self.mcmc.keep == 0 {
            return Err(bad("mcmc", "draws and keep must be positive"));
        }
        if self.projpred_k_folds < 2 {
            return Err(bad("projpred.k_folds", "at least two folds required"));
        }
        if self.search_draws == 0 {
            return Err(bad("projpred.search_draws", "must be positive"));
        }
        if self.preset.is_bodyfat() {
            if self.data.path.is_none() {
                return Err(bad("data.path", format!("required by preset {}", self.preset)));
            }
            if self.data.folds < 2 {
                return Err(bad("data.folds", "at least two folds required"));
            }
            return Ok(());
        }
        let g = &self.grid;
        for (name, empty) in [("grid.n", g.n.is_empty()), ("grid.rho", g.rho.is_empty()), ("grid.p", g.p.is_empty()), ("grid.k", g.k.is_empty())] {
            if empty {
                return Err(bad(name, "must not be empty"));
            }
        }
        if let Some(&r) = g.rho.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(bad("grid.rho", format!("rho = {r} must lie in [0, 1)")));
        }
        if let Some(&n) = g.n.iter().find(|&&n| n < 10) {
            return Err(bad("grid.n", format!("n = {n} is below the minimum of 10")));
        }
        if let Some(&p) = g.p.iter().find(|&&p| p == 0) {
            return Err(bad("grid.p", format!("p = {p} must be positive")));
        }
        let pmin = *g.p.iter().min().unwrap();
        if let Some(&k) = g.k.iter().find(|&&k| k > pmin) {
            return Err(bad("grid.k", format!("k = {k} exceeds p = {pmin}")));
        }
        if self.n_test == 0 {
            return Err(bad("n_test", "must be positive"));
        }
        Ok(())
    }

    pub fn mcmc_config(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            warmup: self.mcmc.warmup,
            draws: self.mcmc.draws,
            keep: self.mcmc.keep,
            seed,
        }
    }

    pub fn reference_spec(&self) -> ReferenceSpec {
        let base = match self.reference {
            ReferenceKind::Spc => ReferenceSpec::spc_default(),
            ReferenceKind::Horseshoe => ReferenceSpec::horseshoe_default(),
        };
        base.with_mcmc(self.mcmc_config(0))
    }

    pub fn projpred_config(&self, seed: u64) -> ProjpredConfig {
        ProjpredConfig {
            reference: self.reference_spec(),
            alpha: self.alpha,
            utility: match self.utility {
                UtilityKind::Kfold => UtilityMethod::KFold { k: self.projpred_k_folds },
                UtilityKind::TisLoo => UtilityMethod::TisLoo,
            },
            max_size: self.max_size,
            search_draws: self.search_draws,
            seed,
            ..ProjpredConfig::default()
        }
    }

    /// Effective configuration as TOML, for echoing and for the output
    /// directory.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Read, default and check a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig, BenchError> {
    load_config(Some(path), &Overrides::default())
}

pub fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig, BenchError> {
    let (file, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", p.display())))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (ConfigFile::parse(&text)?, base)
        }
        None => (ConfigFile::default(), PathBuf::new()),
    };
    file.resolve(ov, &base)
}
