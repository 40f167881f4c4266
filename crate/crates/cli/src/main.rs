use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use aitdd_cli::commands;
use aitdd_cli::config::{ConfigArgs, ConfigError, RunConfig};
use aitdd_core::session::InteractionPattern;

/// Test-driven development with a chat model writing the code.
#[derive(Debug, Parser)]
#[command(name = "aitdd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a fully automated session and print its report
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue the session in this log instead of starting a new one
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Serve one collaborative session over HTTP
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: SocketAddr,
    },
    /// Measure a manually written workspace
    Metrics {
        workspace: PathBuf,
        /// Time the work took, e.g. "35m"
        #[arg(long, value_parser = humantime::parse_duration)]
        elapsed: Option<Duration>,
        #[arg(long)]
        json: bool,
    },
    /// Re-render the report of a logged session
    Replay {
        log: PathBuf,
        #[arg(long)]
        json: bool,
        /// Also write the session's model exchanges as a replay fixture
        #[arg(long)]
        export_fixture: Option<PathBuf>,
    },
    /// Inspect configuration
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the effective configuration
    Show {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, resume, json } => {
            let config = RunConfig::resolve(&config, InteractionPattern::FullyAutomated)?;
            commands::run(&config, resume.as_deref(), json)
        }
        Command::Serve { config, resume, bind } => {
            let config = RunConfig::resolve(&config, InteractionPattern::Collaborative)?;
            commands::serve(&config, resume.as_deref(), bind)
        }
        Command::Metrics {
            workspace,
            elapsed,
            json,
        } => commands::metrics(&workspace, elapsed, json),
        Command::Replay {
            log,
            json,
            export_fixture,
        } => commands::replay(&log, json, export_fixture.as_ref()),
        Command::Config {
            action: ConfigAction::Show { config },
        } => {
            let config = RunConfig::resolve(&config, InteractionPattern::FullyAutomated)?;
            print!("{}", config.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
