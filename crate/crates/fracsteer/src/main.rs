use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracsteer::config::parse_config;
use fracsteer::error::{exit, CliError};
use fracsteer::run::{run, Command};

#[derive(Parser)]
#[command(name = "fracsteer", version, about = "Impulsive fractional stochastic delay simulator and controllability checks")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Statistical checks of the Wiener and fBm generators; writes noise_paths.csv.
    FbmValidate(Opts),
    /// Simulate one trajectory; writes trajectory.csv.
    Solve(Opts),
    /// Evaluate the hypothesis constants; writes ledger.csv.
    Ledger(Opts),
    /// Closed-loop regularization sweep; writes sweep.csv.
    ControlSweep(Opts),
    /// Every subcommand in turn.
    All(Opts),
}

#[derive(clap::Args)]
struct Opts {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[experiment] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[experiment] output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FRACSTEER_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("FRACSTEER_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    configure_threads()?;
    let (cmd, opts) = match cli.command {
        Sub::FbmValidate(o) => (Command::FbmValidate, o),
        Sub::Solve(o) => (Command::Solve, o),
        Sub::Ledger(o) => (Command::Ledger, o),
        Sub::ControlSweep(o) => (Command::ControlSweep, o),
        Sub::All(o) => (Command::All, o),
    };
    let text = std::fs::read_to_string(&opts.config)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", opts.config.display())))?;
    let mut config = parse_config(&text)?;
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    if let Some(o) = opts.out {
        config.output = o;
    }
    let report = run(cmd, &config, &config.output.clone())?;
    print!("{}", report.render());
    Ok(if report.all_passed() { exit::OK } else { exit::VALIDATION })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match execute(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
