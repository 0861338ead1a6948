//! `mguq` command-line interface.
//!
//! Exit codes: 0 on success, 1 for invalid configuration or input data,
//! 2 for failures while running (including any failed split).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mguq::dataset::{generate_synthetic, save_dataset, SyntheticSpec};
use mguq::experiment::{emit_plots, run_experiment, validate_config};
use mguq::Error;

#[derive(Parser)]
#[command(name = "mguq", version, about = "Multi-group calibration and conformal experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its report bundle.
    Run {
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as JSONL.
    Synth {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write plot-ready CSV series for a report bundle.
    Plots { bundle: PathBuf },
    /// Check a config and print its normalized form.
    Validate { config: PathBuf },
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Run { config, output_dir } => {
            let mut config = validate_config(&config)?;
            if let Some(dir) = output_dir {
                config.output_dir = dir;
            }
            let summary = run_experiment(&config)?;
            println!("{}", summary.bundle_dir.display());
            if summary.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &summary.failures {
                    eprintln!("split {} failed: {}", f.split, f.error);
                }
                Ok(ExitCode::from(2))
            }
        }
        Command::Synth { spec, output, seed } => {
            let text = std::fs::read_to_string(&spec).map_err(|source| Error::Io { path: spec.clone(), source })?;
            let spec = SyntheticSpec::from_toml(&text)?;
            let data = generate_synthetic(&spec, seed)?;
            for w in &data.warnings {
                log::warn!("{w}");
            }
            save_dataset(&output, &data.entities)?;
            println!("wrote {} entities to {}", data.entities.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Plots { bundle } => {
            for path in emit_plots(&bundle)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let config = validate_config(&config)?;
            print!("{}", config.to_toml()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
