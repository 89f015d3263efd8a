use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sysid::cli::{self, DatasetRef, RunConfig, Split};
use sysid::{Error, Result};

#[derive(Parser)]
#[command(name = "sysid", version, about = "GRU and TCN models for nonlinear system identification")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Find a learning rate, train, and write checkpoint and history.
    Train(Common),
    /// Score a checkpoint on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset descriptor JSON; defaults to the dataset of --config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// test, estimation, train or valid.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Simulate the outputs for the inputs of a CSV file.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time training steps and simulation for all four variants.
    Bench(Common),
    /// Random search with asynchronous successive halving.
    Hpo(Common),
    /// Tabulate results found under a directory.
    Report {
        /// Directory holding run outputs.
        #[arg(long)]
        results: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = std::env::current_dir()
            .map_err(|e| Error::io(".", e))?
            .join(out);
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<()> {
    match args.command {
        Command::Train(common) => {
            let s = cli::cmd_train(&load_config(&common)?)?;
            println!(
                "{} trained {} epochs (best {}): valid RMSE {:.6}, test RMSE {:.6} ({})",
                s.variant, s.epochs_run, s.best_epoch, s.valid_rmse, s.test_rmse, s.test_source
            );
        }
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            split,
        } => {
            let cfg = load_config(&common)?;
            let split: Split = split.parse()?;
            let (dataset, base) = match dataset {
                Some(p) => (DatasetRef::Path(p), PathBuf::new()),
                None => (
                    cfg.dataset
                        .clone()
                        .ok_or_else(|| Error::Usage("evaluate needs --dataset or a config with a dataset".into()))?,
                    cfg.base_dir.clone(),
                ),
            };
            let e = cli::cmd_evaluate(&checkpoint, &dataset, &base, split, &cfg.out_path())?;
            println!(
                "{} on {} ({}): RMSE {:.6} over {} samples, {} transient samples skipped",
                e.variant, e.dataset, e.split, e.rmse, e.samples, e.transient_skipped
            );
        }
        Command::Simulate { checkpoint, input, out } => {
            let rows = cli::cmd_simulate(&checkpoint, &input, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::Bench(common) => {
            for p in cli::cmd_bench(&load_config(&common)?)? {
                println!("{}", p.display());
            }
        }
        Command::Hpo(common) => {
            let out = cli::cmd_hpo(&load_config(&common)?)?;
            for t in out.trials.iter().take(5) {
                println!("trial {:>3}: best valid RMSE {:.6} {:?}", t.trial_id, t.best_rmse(), t.config);
            }
        }
        Command::Report { results } => print!("{}", cli::cmd_report(Path::new(&results))?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
