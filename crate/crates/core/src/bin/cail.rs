use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cail_core::checks::{run_invariant_suite, run_oracle_suite};
use cail_core::harness::{parse_config, run_experiment, summarize, ExperimentConfig};
use cail_core::CailError;
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "cail", version, about = "Confidence-aware imitation learning on tabular gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and write run_<seed>.csv and summary.txt.
    Run {
        /// Experiment file; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides run.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite. Exits 0 when every check passes.
    Check,
    /// Compare gradients, returns and occupancies against the brute-force oracles.
    Oracle,
    /// Rebuild the summary table from the run_*.csv files in a directory.
    Summarize { dir: PathBuf },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, String> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => {
            let cfg = match load_config(config.as_ref()) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let Some(dir) = out.or_else(|| cfg.out_dir.clone()) else {
                eprintln!("config error: no output directory (pass --out or set run.out_dir)");
                return ExitCode::from(EXIT_CONFIG);
            };
            match run_experiment(&cfg, &dir) {
                Ok(log) if log.failures.is_empty() => {
                    print!("{}", fs::read_to_string(dir.join("summary.txt")).unwrap_or_default());
                    ExitCode::SUCCESS
                }
                Ok(log) => {
                    for (seed, err) in &log.failures {
                        eprintln!("seed {seed} failed: {err}");
                    }
                    ExitCode::from(EXIT_RUNTIME)
                }
                Err(CailError::Config { line, message }) => {
                    eprintln!("config error at line {line}: {message}");
                    ExitCode::from(EXIT_CONFIG)
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Check => report(run_invariant_suite()),
        Command::Oracle => report(run_oracle_suite()),
        Command::Summarize { dir } => match summarize(&dir) {
            Ok(text) => {
                print!("{text}");
                if let Err(e) = fs::write(dir.join("summary.txt"), &text) {
                    eprintln!("could not write summary.txt: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("summarize failed: {e}");
                ExitCode::from(EXIT_RUNTIME)
            }
        },
    }
}

fn report(result: cail_core::Result<Vec<cail_core::checks::CheckOutcome>>) -> ExitCode {
    match result {
        Ok(outcomes) => {
            for o in &outcomes {
                println!("{o}");
            }
            if outcomes.iter().all(|o| o.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK)
            }
        }
        Err(e) => {
            eprintln!("check failed to run: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
