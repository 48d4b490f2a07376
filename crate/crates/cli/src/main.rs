//! `binfilter` command-line interface.
//!
//! Subcommands: `toy` (worked example), `run` (full experiment),
//! `oracle` (randomized check suite), `dump-truth` (data only).
//! Exit codes: 0 ok, 1 usage, 2 check failure, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use binfilter::config::ExperimentConfig;
use binfilter::exit_codes;
use binfilter::{oracle_suite, runner, toy};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "binfilter", version, about = "Ensemble filtering of binary state vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file (flat key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set M=40 (repeatable).
    #[arg(long = "set", value_name = "KEY=VAL")]
    set: Vec<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory override.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in worked example and verify its reference outputs.
    Toy {
        /// Output directory for the CSV dumps.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Also write each backward value function as CSV.
        #[arg(long)]
        dump_value_functions: bool,
    },
    /// Run a full filtering experiment.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write value-function dumps from replication 0 at the
        /// evaluation steps.
        #[arg(long)]
        dump_value_functions: bool,
    },
    /// Run the randomized oracle check suite.
    Oracle {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate and dump the truth trajectory and observations only.
    DumpTruth {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    for kv in &args.set {
        cfg.apply_set(kv).map_err(|e| e.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = Some(jobs);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn init_thread_pool(jobs: Option<usize>) {
    if let Some(jobs) = jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::from(exit_codes::OK as u8);
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(exit_codes::USAGE as u8);
        }
    };

    let code = match cli.command {
        Command::Toy { out, dump_value_functions } => {
            match toy::run_toy(out.as_deref(), dump_value_functions) {
                Ok(report) => {
                    toy::print_report(&report);
                    if report.passed {
                        exit_codes::OK
                    } else {
                        exit_codes::CHECK_FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    exit_codes::RUNTIME
                }
            }
        }
        Command::Run { config, dump_value_functions } => match load_config(&config) {
            Ok(mut cfg) => {
                cfg.dump_value_functions |= dump_value_functions;
                init_thread_pool(cfg.jobs);
                match runner::run_experiment(&cfg) {
                    Ok(summary) => {
                        println!("wrote {}", summary.out_dir.display());
                        for (code, value) in &summary.frobenius {
                            println!("frobenius_{code} = {value:.4}");
                        }
                        if cfg.methods.proposed {
                            println!(
                                "value-function pieces: max {} mean {:.2}",
                                summary.diagnostics.max_pieces,
                                summary.diagnostics.mean_pieces()
                            );
                        }
                        exit_codes::OK
                    }
                    Err(e) => {
                        eprintln!("error: {e:#}");
                        exit_codes::RUNTIME
                    }
                }
            }
            Err(msg) => {
                eprintln!("error: {msg}");
                exit_codes::USAGE
            }
        },
        Command::Oracle { config } => match load_config(&config) {
            Ok(cfg) => {
                init_thread_pool(cfg.jobs);
                let report = oracle_suite::run_oracle_suite(cfg.seed, 200, 12, 20);
                for c in &report.checks {
                    println!("{}: {} ({})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
                }
                if let Err(e) = oracle_suite::write_report_csv(&report, &cfg.out_dir) {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(exit_codes::RUNTIME as u8);
                }
                if report.all_passed() {
                    exit_codes::OK
                } else {
                    exit_codes::CHECK_FAILURE
                }
            }
            Err(msg) => {
                eprintln!("error: {msg}");
                exit_codes::USAGE
            }
        },
        Command::DumpTruth { config } => match load_config(&config) {
            Ok(cfg) => match runner::dump_truth(&cfg) {
                Ok(()) => {
                    println!("wrote {}", cfg.out_dir.display());
                    exit_codes::OK
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    exit_codes::RUNTIME
                }
            },
            Err(msg) => {
                eprintln!("error: {msg}");
                exit_codes::USAGE
            }
        },
    };
    ExitCode::from(code as u8)
}
