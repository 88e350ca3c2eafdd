use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use vbse_cli::config::Experiment;
use vbse_cli::error::{CliError, EXIT_OK};
use vbse_cli::{config_hash, parse_config, run_experiment, OracleCache};

#[derive(Parser)]
#[command(name = "vbse", version, about = "Variational basis state encoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse and validate a config, printing it with defaults filled in.
    Validate { config: PathBuf },
    /// Run a `hardware_compile` config.
    CompileHardware { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, hash) = match cli.command {
        Command::Validate { config } => match parse_config(&config) {
            Ok(cfg) => {
                println!("{}", cfg.canonical_json());
                (Ok(()), None)
            }
            Err(e) => (Err(e), None),
        },
        Command::Run { config } => execute(&config, None),
        Command::CompileHardware { config } => execute(&config, Some(Experiment::HardwareCompile)),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            let report = e.report(hash.as_deref());
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(path: &std::path::Path, require: Option<Experiment>) -> (Result<(), CliError>, Option<String>) {
    let cfg = match parse_config(path) {
        Ok(cfg) => cfg,
        Err(e) => return (Err(e), None),
    };
    if let Some(want) = require {
        if cfg.experiment != want {
            return (Err(CliError::config("experiment", format!("expected `{}`, got `{}`", want.name(), cfg.experiment.name()))), None);
        }
    }
    let hash = config_hash(&cfg);
    let result = run_experiment(&cfg, &OracleCache::from_env()).map(|out| {
        println!("{}", json!({ "status": "ok", "output": out.dir, "config_hash": hash, "results": out.summary["results"] }));
    });
    (result, Some(hash))
}
