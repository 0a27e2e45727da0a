//! `wpf`: initialise, run and check constrained phase-field Willmore flows.

mod check;
mod commands;
mod oracle;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wpf_core::io::ConfigFile;

use check::{run_checks, CheckOptions};
use commands::{cmd_init, cmd_run, CliError, CliResult};

#[derive(Parser)]
#[command(name = "wpf", version, about = "Constrained phase-field Willmore flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a feasible initial field and write `v0.snap`.
    Init {
        /// Configuration file; built-in defaults when omitted.
        config: Option<PathBuf>,
    },
    /// Evolve the flow and write diagnostics, snapshots and a summary.
    Run { config: Option<PathBuf> },
    /// Run the invariant suite for a configuration.
    Check {
        config: Option<PathBuf>,
        /// Corrupt one diagnostics row before checking (negative control).
        #[arg(long)]
        tamper: bool,
        /// Restarts for the tiny-grid brute-force comparison.
        #[arg(long, default_value_t = 50)]
        restarts: usize,
    },
}

fn load(path: Option<&PathBuf>) -> CliResult<ConfigFile> {
    match path {
        Some(p) => Ok(ConfigFile::load(p)?),
        None => {
            let mut cfg = ConfigFile::default();
            cfg.apply_env();
            Ok(cfg)
        }
    }
}

fn check(cfg: &ConfigFile, opts: &CheckOptions) -> CliResult<()> {
    let lines = run_checks(cfg, opts)?;
    let width = lines.iter().map(|l| l.name.len()).max().unwrap_or(0);
    for l in &lines {
        println!(
            "{:<width$}  {}  worst {:.3e}  {}",
            l.name,
            if l.passed { "PASS" } else { "FAIL" },
            l.worst,
            l.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    println!("{} of {} checks passed", lines.len() - failed, lines.len());
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Init { config } => cmd_init(&load(config.as_ref())?).map(|_| ()),
        Command::Run { config } => cmd_run(&load(config.as_ref())?),
        Command::Check {
            config,
            tamper,
            restarts,
        } => check(&load(config.as_ref())?, &CheckOptions { tamper, restarts }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors share exit code 1 with configuration errors.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wpf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
