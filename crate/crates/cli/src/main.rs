use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cholesteric_cli::config::ExperimentConfig;
use cholesteric_cli::{check_run, exit_code, run_experiment, EXIT_CONFIG, EXIT_SOLVER};

#[derive(Parser)]
#[command(name = "cholesteric1d", version, about = "One-dimensional cholesteric energy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Dotted-path override, e.g. `params.L=0.5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Output directory, overriding `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-validate the artifacts of a finished run.
    Check { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Run { config, overrides, jobs, out } => {
            let cfg = std::fs::read_to_string(&config)
                .map_err(anyhow::Error::from)
                .and_then(|text| ExperimentConfig::from_json(&text, &overrides))
                .and_then(|mut c| {
                    if let Some(o) = out {
                        c.output_dir = o;
                    }
                    Ok(c)
                });
            match cfg {
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    EXIT_CONFIG
                }
                Ok(cfg) => match run_experiment(&cfg, jobs) {
                    Ok(s) => {
                        for c in &s.checks {
                            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                        }
                        for f in &s.failures {
                            eprintln!("solver failure: {f}");
                        }
                        exit_code(&s)
                    }
                    Err(e) => {
                        eprintln!("run failed: {e:#}");
                        EXIT_SOLVER
                    }
                },
            }
        }
        Command::Check { dir } => match check_run(&dir) {
            Ok(s) => {
                println!("{}: {} checks, all passed: {}", s.kind, s.checks.len(), s.all_passed);
                exit_code(&s)
            }
            Err(e) => {
                eprintln!("invalid run: {e:#}");
                EXIT_SOLVER
            }
        },
    };
    ExitCode::from(code as u8)
}
