use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sweep_cli::{cmd_check, cmd_convergence, cmd_solve, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "sweep", version, about = "Time stepping for constrained sweeping processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for initial placement and sampling; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and write trajectories with run summaries.
    Solve(Common),
    /// Estimate the order of convergence against a fine reference run.
    Convergence(Common),
    /// Sample the structural assumptions around a computed trajectory.
    Check(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    let (Command::Solve(c) | Command::Convergence(c) | Command::Check(c)) = &cli.command;
    if let Some(threads) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set up {threads} threads: {e}")))?;
    }
    let cfg = RunConfig::load(&c.config)?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Solve(_) => {
            for path in cmd_solve(&cfg, &out, c.seed)? {
                log::info!("wrote {}", path.display());
            }
        }
        Command::Convergence(_) => {
            let study = cmd_convergence(&cfg, &out, c.seed)?;
            println!("{}", serde_json::to_string(&sweep_cli::convergence_report(&study)["slope"]).unwrap_or_default());
        }
        Command::Check(_) => {
            let report = cmd_check(&cfg, &out, c.seed)?;
            log::info!(
                "quadratic bound violations {}/{}, qualification violations {}/{}",
                report.quadratic_bound_violations,
                report.quadratic_samples,
                report.qualification_violations,
                report.qualification_samples
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SWEEP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(k) = e.failing_step() {
                eprintln!("failing step: {k}");
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
