use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctdg::learn::TaskKind;
use ctdg_cli::interpret::{cmd_interpret, InterpretArgs};
use ctdg_cli::{generate, pipeline, Overrides, Result, RunConfig};

#[derive(Parser)]
#[command(name = "ctdg", version, about = "Continuous-time dynamic graph learning and spectral interpretation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets any config field, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self, band: Option<String>, freq_above: Option<f64>) -> Result<RunConfig> {
        let overrides = Overrides {
            set: self.set.clone(),
            seed: self.seed,
            out: self.out.clone(),
            band,
            freq_above,
        };
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the dataset; writes a summary.
    Ingest(Common),
    /// Fit the node clusters.
    Cluster(Common),
    /// Ingest, cluster and train; writes checkpoint and epoch log.
    Train(Common),
    /// Test-split metrics of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Band perturbation of predictions in the graph Fourier domain.
    Interpret {
        #[command(flatten)]
        common: Common,
        /// Eigen-index range `a..b`.
        #[arg(long, conflicts_with = "freq_above")]
        band: Option<String>,
        /// Every frequency strictly above this eigenvalue.
        #[arg(long)]
        freq_above: Option<f64>,
        #[arg(long, conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Signal matrix CSV to perturb.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Donor signal matrix for inter-perturbation.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Ground truth for the prediction file.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Write a synthetic dataset and config.
    Generate {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => pipeline::cmd_ingest(&c.load(None, None)?),
        Command::Cluster(c) => pipeline::cmd_cluster(&c.load(None, None)?).map(drop),
        Command::Train(c) => {
            let out = pipeline::cmd_train(&c.load(None, None)?)?;
            println!("best epoch {} metric {:.6}", out.best_epoch, out.best_metric);
            Ok(())
        }
        Command::Eval { common, checkpoint } => {
            let report = pipeline::cmd_eval(&common.load(None, None)?, &checkpoint)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Interpret {
            common,
            band,
            freq_above,
            checkpoint,
            predictions,
            reference,
            truth,
        } => {
            let cfg = common.load(band, freq_above)?;
            let args = InterpretArgs {
                checkpoint: checkpoint.as_deref(),
                predictions: predictions.as_deref(),
                reference: reference.as_deref(),
                truth: truth.as_deref(),
            };
            for (name, a, b) in cmd_interpret(&cfg, &args)? {
                println!("{name}: {a:.6} -> {b:.6}");
            }
            Ok(())
        }
        Command::Generate { task, out, seed } => generate::generate(task, &out, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
