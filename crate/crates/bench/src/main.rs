use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use refsel_bench::{emit_plotdata, load_config, run_experiment, BenchError, Overrides, Preset};

const CONFIG_KEYS: &str = "\
CONFIG FILE (TOML, every key optional):
  preset          bodyfat1 | bodyfat2 | bodyfat3 | sim1 | sim2 | custom
  replications    replications per scenario before scaling (default 100;
                  bodyfat1: CV repeats, default 1)
  scale           multiplies replications, minimum 1 (default 1)
  seed            master seed (default 1)
  out             output directory (default results/<preset>)
  jobs            worker threads (default 1)
  alpha           projpred size-rule level (default 0.16)
  methods         list of reference, projpred, steplm, bayes_step, lasso,
                  iter_projpred, iter_lasso, locfdr, eb_median, ci90
  filters         filter variants to run, e.g. [false, true] (default)
  n_test          held-out rows per simulated dataset (default 1000)
  reference       spc | horseshoe (simulations: spc; body fat: horseshoe)
  utility         kfold | tis_loo (simulations: kfold; body fat: tis_loo)
  stability_conf  confidence level of stability intervals (default 0.95)
  [grid]          n, rho, p, k lists for simulated presets
  [data]          path, target (siri), drop (idno, brozek, density),
                  noise_p (total columns after noise, 100), folds (10)
  [mcmc]          warmup (1000), draws (1000), keep (400)
  [projpred]      k_folds (10), search_draws (20), max_size

Relative data paths are resolved against the config file's directory.
Exit status: 0 success, 2 configuration error, 3 data error.";

#[derive(Parser)]
#[command(name = "refsel", version, about = "Reference-model variable selection experiments", after_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) an experiment and write its aggregates.
    #[command(after_help = CONFIG_KEYS)]
    Run {
        /// Experiment config file; omit to use preset defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Replication multiplier for reduced-size runs.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write plot-ready CSV for one figure from a results directory.
    Plotdata {
        /// rmse_vs_fdr | sensitivity_vs_fdr | entropy | stability | inclusion
        #[arg(long)]
        figure: String,
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> Result<(), BenchError> {
    match cmd {
        Command::Run {
            config,
            preset,
            scale,
            out,
            seed,
            jobs,
        } => {
            let ov = Overrides {
                preset,
                scale,
                out,
                seed,
                jobs,
            };
            let cfg = load_config(config.as_deref(), &ov)?;
            eprintln!("effective configuration:\n{}", cfg.to_toml());
            let s = run_experiment(&cfg)?;
            println!(
                "{} units ({} run, {} resumed), {} failed records; results in {}",
                s.units_total,
                s.units_run,
                s.units_resumed,
                s.failed_records,
                s.out.display()
            );
            for f in s.files {
                println!("  {}", f.display());
            }
            Ok(())
        }
        Command::Plotdata { figure, input } => {
            let path = emit_plotdata(&input, &figure)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}
