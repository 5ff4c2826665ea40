//! Thin CLI over the library's experiment runner: `run`, `validate`, and
//! `presets list`. Exit codes: 0 on success, 2 for config problems, 3 for
//! capacity problems, 1 for anything else (I/O and numerics).

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dflsim::runner::{self, OUTPUT_ROOT_ENV};
use dflsim::Error;

#[derive(Parser)]
#[command(
    name = "dflsim",
    version,
    about = "Desk-scale lattice-gauge dynamics runs from JSON configs",
    after_help = format!(
        "Outputs land under the directory named by {OUTPUT_ROOT_ENV} \
         (default: current directory), in each config's output_dir."
    )
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and execute a config file (or preset name); write data
    /// files and a manifest.
    Run {
        /// Path to a config JSON file, or a preset name.
        config: String,
    },
    /// Check a config file (or preset name) without running anything.
    Validate {
        /// Path to a config JSON file, or a preset name.
        config: String,
    },
    /// Inspect the built-in presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names and what they compute.
    List,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Capacity(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config } => {
            let cfg = runner::load_config_arg(&config)?;
            let arts = runner::run_config(&cfg)?;
            for file in &arts.files {
                println!("{}", arts.output_dir.join(file).display());
            }
            println!("{}", arts.manifest_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = runner::load_config_arg(&config)?;
            let report = runner::validate_config(&cfg);
            println!("{}", report.render());
            Ok(match report.into_error() {
                None => ExitCode::SUCCESS,
                Some(err) => ExitCode::from(exit_code_for(&err)),
            })
        }
        Command::Presets { action: PresetAction::List } => {
            for (name, summary, _) in runner::PRESETS {
                println!("{name}  -  {summary}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
