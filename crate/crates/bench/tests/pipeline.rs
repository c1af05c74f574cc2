use std::fs;
use std::path::Path;
use std::process::Command;

use refsel_bench::config::ConfigFile;
use refsel_bench::run::{run_experiment_limited, RECORDS_FILE};
use refsel_bench::{emit_plotdata, run_experiment, validate_config, BenchError, ExperimentConfig, Overrides};

const TINY: &str = r#"
preset = "custom"
replications = 3
methods = ["reference", "projpred", "steplm", "lasso", "eb_median"]
n_test = 50
[grid]
n = [40]
rho = [0.5]
p = [12]
k = [3]
[mcmc]
warmup = 100
draws = 200
keep = 50
[projpred]
k_folds = 4
search_draws = 10
"#;

fn tiny(out: &Path, jobs: usize) -> ExperimentConfig {
    let ov = Overrides {
        out: Some(out.to_path_buf()),
        jobs: Some(jobs),
        ..Overrides::default()
    };
    ConfigFile::parse(TINY).unwrap().resolve(&ov, Path::new("")).unwrap()
}

const AGGREGATES: &[&str] = &[
    "metrics.csv",
    "inclusion.csv",
    "plot_rmse_vs_fdr.csv",
    "plot_entropy.csv",
    "plot_stability.csv",
];

fn aggregates(dir: &Path) -> Vec<Vec<u8>> {
    AGGREGATES.iter().map(|f| fs::read(dir.join(f)).unwrap()).collect()
}

#[test]
fn missing_replications_default_to_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "preset = \"sim1\"\n").unwrap();
    let cfg = validate_config(&path).unwrap();
    assert_eq!(cfg.replications, 100);
    assert_eq!(cfg.alpha, 0.16);
}

#[test]
fn rho_above_one_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "preset = \"sim1\"\n[grid]\nrho = [1.2]\n").unwrap();
    let err = validate_config(&path).unwrap_err();
    assert!(matches!(err, BenchError::Config(_)));
    assert!(err.to_string().contains("rho"));
}

#[test]
fn empty_results_give_header_only_plot_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = emit_plotdata(dir.path(), "rmse_vs_fdr").unwrap();
    assert_eq!(fs::read_to_string(path).unwrap(), "fdr,rmse,method,n,rho,se\n");
    assert!(matches!(emit_plotdata(dir.path(), "nope"), Err(BenchError::Config(_))));
}

#[test]
fn rerun_resume_and_worker_count_give_identical_aggregates() {
    let root = tempfile::tempdir().unwrap();
    let full = root.path().join("full");
    let summary = run_experiment(&tiny(&full, 1)).unwrap();
    assert_eq!(summary.units_total, 3);
    assert_eq!(summary.failed_records, 0);
    let want = aggregates(&full);

    let header = "fdr,rmse,method,n,rho,se";
    let plot = String::from_utf8(want[2].clone()).unwrap();
    assert!(plot.starts_with(header));
    let labels: Vec<&str> = plot.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(labels, ["reference", "projpred", "steplm", "steplm_ref", "lasso", "lasso_ref"]);

    // Interrupted after one unit, with a half-written line at the end.
    let resumed = root.path().join("resumed");
    let cfg = tiny(&resumed, 1);
    assert_eq!(run_experiment_limited(&cfg, Some(1)).unwrap().units_run, 1);
    let records = resumed.join(RECORDS_FILE);
    let text = fs::read_to_string(&records).unwrap();
    let first = text.lines().next().unwrap();
    fs::write(&records, format!("{text}{}", &first[..first.len() / 3])).unwrap();
    let s = run_experiment(&cfg).unwrap();
    assert_eq!((s.units_resumed, s.units_run), (1, 2));
    assert_eq!(aggregates(&resumed), want);

    // Nothing left to do on a third invocation.
    assert_eq!(run_experiment(&cfg).unwrap().units_run, 0);
    assert_eq!(aggregates(&resumed), want);

    let parallel = root.path().join("parallel");
    run_experiment(&tiny(&parallel, 2)).unwrap();
    assert_eq!(aggregates(&parallel), want);

    // emit_plotdata regenerates the same bytes from the records.
    let again = emit_plotdata(&full, "rmse_vs_fdr").unwrap();
    assert_eq!(fs::read(again).unwrap(), want[2]);
}

#[test]
fn a_different_config_cannot_reuse_an_output_directory() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = tiny(root.path(), 1);
    cfg.replications = 1;
    run_experiment(&cfg).unwrap();
    cfg.seed += 1;
    assert!(matches!(run_experiment(&cfg), Err(BenchError::Config(_))));
}

fn refsel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_refsel"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn exit_codes_distinguish_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[grid]\nrho = [1.2]\n").unwrap();
    assert_eq!(refsel(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("bodyfat.toml");
    fs::write(&missing, "preset = \"bodyfat2\"\n[data]\npath = \"no_such_file.csv\"\n").unwrap();
    let out = refsel(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let d = dir.path().to_str().unwrap();
    assert_eq!(refsel(&["plotdata", "--figure", "nope", "--in", d]).status.code(), Some(2));
    assert_eq!(refsel(&["plotdata", "--figure", "entropy", "--in", "/no/such/dir"]).status.code(), Some(3));
    assert_eq!(refsel(&["plotdata", "--figure", "entropy", "--in", d]).status.code(), Some(0));
}
