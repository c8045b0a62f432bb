use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use error::CliError;

/// Large deviations for delay equations with Markov-chain noise.
#[derive(Debug, Parser)]
#[command(name = "ddeldp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct GlobalArgs {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Tolerance override: root residual, normalization check or
    /// quasipotential endpoint tolerance, depending on the subcommand.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Characteristic roots and the instability check.
    Roots,
    /// Spectral data of the zero root.
    Spectral,
    /// Full and reduced sample paths under shared noise.
    Simulate,
    /// Action functional of a path given as CSV.
    Action,
    /// Quasipotential by direct transcription.
    Quasipotential,
    /// Analytic optimal exit control for a linear scalar equation.
    LinearExit,
    /// Monte Carlo exit probabilities against the rate function.
    McExit,
    /// Instability, noise and normalization checks with a pass/fail report.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Roots => "roots",
            Command::Spectral => "spectral",
            Command::Simulate => "simulate",
            Command::Action => "action",
            Command::Quasipotential => "quasipotential",
            Command::LinearExit => "linear-exit",
            Command::McExit => "mc-exit",
            Command::Validate => "validate",
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if let Some(t) = g.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Validation(format!("--tol must be positive, got {t}")));
        }
    }
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
    }
    let config = g.config.as_deref().ok_or_else(|| CliError::Validation("--config is required".into()))?;
    std::fs::create_dir_all(&g.out)?;
    match cli.command {
        Command::Roots => commands::roots(config, g),
        Command::Spectral => commands::spectral(config, g),
        Command::Simulate => commands::simulate(config, g),
        Command::Action => commands::action(config, g),
        Command::Quasipotential => commands::quasipotential(config, g),
        Command::LinearExit => commands::linear_exit(config, g),
        Command::McExit => commands::mc_exit(config, g),
        Command::Validate => commands::validate(config, g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DDELDP_LOG")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Numerical(_) = e {
                let diag = serde_json::json!({
                    "schema_version": config::SCHEMA_VERSION,
                    "command": cli.command.name(),
                    "error": e.kind(),
                    "message": e.to_string(),
                });
                eprintln!("{diag}");
                let _ = std::fs::write(cli.global.out.join("diagnostic.json"), format!("{diag:#}\n"));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
