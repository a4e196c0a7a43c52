use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dtp_harness::config::TrainConfig;
use dtp_harness::error::Result;
use dtp_harness::experiment::{
    run_alpha_study, run_gn_compare, run_train, run_verify, ExperimentReport,
};

/// Target-propagation trainer and measurement tool.
#[derive(Parser)]
#[command(name = "dtp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network per a JSON config and record per-sample metrics.
    Train {
        /// Path to the JSON config file.
        #[arg(long)]
        config: PathBuf,
        /// Metrics output (JSON lines; a .summary.txt lands next to it).
        #[arg(long, default_value = "metrics.jsonl")]
        out: PathBuf,
        /// Also write the final network as decimal text.
        #[arg(long)]
        save_net: Option<PathBuf>,
    },
    /// Check the built-in numerical identities and report pass/fail.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "verify.jsonl")]
        out: PathBuf,
    },
    /// Measure inversion contraction rates against the spectral oracle.
    AlphaStudy {
        /// Optional JSON config; only the seed is read.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "alpha_study.jsonl")]
        out: PathBuf,
    },
    /// Compare target gaps with Gauss-Newton directions across step sizes.
    GnCompare {
        /// Optional JSON config; only the seed is read.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "gn_compare.jsonl")]
        out: PathBuf,
    },
}

fn load_or_default(path: Option<&PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<ExperimentReport> {
    match cli.command {
        Command::Train {
            config,
            out,
            save_net,
        } => {
            let config = TrainConfig::load(&config)?;
            run_train(&config, &out, save_net.as_deref())
        }
        Command::Verify { seed, out } => run_verify(seed, &out),
        Command::AlphaStudy { config, out } => {
            let config = load_or_default(config.as_ref())?;
            run_alpha_study(&config, &out)
        }
        Command::GnCompare { config, out } => {
            let config = load_or_default(config.as_ref())?;
            run_gn_compare(&config, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(report) => {
            print!("{}", report.summary);
            if report.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
