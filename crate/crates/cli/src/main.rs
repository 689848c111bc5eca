use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eigenprice::config::RunConfig;
use eigenprice::pipeline::{plotdata, run, ExitStatus, RunOptions, Stage};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "eigenprice", version, about = "Positive pricing operators: checks, eigenpairs, yields and decompositions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stop after the checks if any of them does not pass.
    #[arg(long, global = true)]
    strict: bool,
    /// Largest operator handed to the dense spectrum oracle.
    #[arg(long, global = true)]
    dense_limit: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build the operator and run the configured condition checks.
    Check,
    /// Checks plus the principal eigenpair and spectrum report.
    Solve,
    /// Solve plus yield curves and long-horizon limits.
    Price,
    /// Price plus the permanent/transitory decomposition.
    Decompose,
    /// Recover the time preference and habit transform.
    Habit,
    /// Re-emit existing artifacts as (x, y) series.
    Plotdata,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(s) => s.code(),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitStatus::ConfigError.code()
        }
    };
    ExitCode::from(code as u8)
}

fn execute(cli: &Cli) -> Result<ExitStatus, String> {
    let path = cli.config.as_ref().ok_or("--config is required")?;
    let cfg = RunConfig::from_path(path).map_err(|e| e.to_string())?;
    let opts = RunOptions { seed: cli.seed, out: cli.out.clone(), dense_limit: cli.dense_limit, strict: cli.strict };
    let stage = match cli.command {
        Command::Check => Stage::Check,
        Command::Solve => Stage::Solve,
        Command::Price => Stage::Price,
        Command::Decompose => Stage::Decompose,
        Command::Habit => Stage::Habit,
        Command::Plotdata => {
            let dir = opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
            return match plotdata(&dir) {
                Ok(files) => {
                    files.iter().for_each(|f| println!("{}", f.display()));
                    Ok(ExitStatus::Success)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Ok(ExitStatus::RuntimeError)
                }
            };
        }
    };
    let outcome = run(&cfg, stage, &opts);
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    if let Some(rho) = outcome.rho {
        println!("rho {rho:e}");
    }
    println!("exit {} artifacts {}", outcome.status.code(), outcome.out_dir.display());
    Ok(outcome.status)
}
