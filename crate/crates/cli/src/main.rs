use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jitai_cli::commands;
use jitai_cli::{CliError, ExperimentConfig, Overrides};
use jitai_core::eval::RegretMode;
use jitai_core::sim::AlgorithmKind;

/// Simulated adaptive-intervention trials with Thompson-sampling learners.
#[derive(Parser)]
#[command(name = "jitai", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Simulation setting, 1 or 2.
    #[arg(long, global = true)]
    setting: Option<u8>,
    /// Algorithm(s): simple, ls4l2, complicated. Repeat or comma-separate.
    #[arg(long, global = true, value_delimiter = ',')]
    algorithm: Vec<String>,
    /// Replicates for every algorithm.
    #[arg(long, global = true)]
    replicates: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Realized,
    Expected,
}

#[derive(Subcommand)]
enum Command {
    /// Run trials and write decision logs, coefficients and failure reports.
    Simulate,
    /// Aggregate cumulative regret curves from a simulate directory.
    Regret {
        log_dir: PathBuf,
        /// Score realized actions or the logged policy's expectation.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Fit an algorithm's model to a decision log.
    Fit {
        log: PathBuf,
        /// Participant whose random effects and own-data rules apply.
        #[arg(long)]
        participant: Option<u32>,
    },
    /// Build a policy table from a fit directory.
    PolicyTable {
        fit_dir: PathBuf,
        /// Participant whose random effects enter the table.
        #[arg(long)]
        participant: Option<u32>,
    },
    /// Calibration report of logged probabilities in a decision log.
    Calibrate {
        log: PathBuf,
        /// Width of the probability bins.
        #[arg(long, default_value_t = 0.05)]
        bin_width: f64,
    },
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let common = cli.common;
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        setting: common.setting,
        algorithms: common.algorithm.clone(),
        replicates: common.replicates,
    };
    let cfg = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Regret { log_dir, mode } => {
            let out = common.out.unwrap_or_else(|| log_dir.clone());
            let mode = mode.map(|m| match m {
                Mode::Realized => RegretMode::Realized,
                Mode::Expected => RegretMode::Expected,
            });
            commands::regret(&log_dir, &out, mode)
        }
        Command::Fit { log, participant } => {
            let algo = match common.algorithm.as_slice() {
                [] => AlgorithmKind::Ls4l2,
                [_] => cfg.algorithms[0],
                _ => return Err(CliError::validation("fit takes exactly one --algorithm")),
            };
            commands::fit(&log, &cfg, algo, participant)
        }
        Command::PolicyTable { fit_dir, participant } => commands::policy_table(&fit_dir, &cfg, participant),
        Command::Calibrate { log, bin_width } => commands::calibrate(&log, &cfg, bin_width),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation errors; 2 is reserved for learner breakage
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(manifest) => {
            println!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
