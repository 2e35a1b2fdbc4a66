use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epiecon_cli::{commands, config, output, CliError};

#[derive(Parser)]
#[command(
    name = "epiecon",
    version,
    about = "Age-structured epidemic-economy simulator and policy optimizer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario document (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` in the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and gradient probes.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured policy and write time series and snapshots.
    Simulate(Common),
    /// Evaluate the configured target under the configured policy.
    Evaluate(Common),
    /// Search for a better block policy.
    Optimize(Common),
    /// Run the numerical verification diagnostics.
    Check(Common),
    /// Evaluate the target over a grid of one or two swept scalars.
    Sweep(Common),
}

type Handler = fn(&config::Config, &std::path::Path) -> Result<(), CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, cmd): (&Common, Handler) = match &cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Evaluate(c) => (c, commands::evaluate),
        Command::Optimize(c) => (c, commands::optimize),
        Command::Check(c) => (c, commands::check),
        Command::Sweep(c) => (c, commands::sweep),
    };
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let cfg = config::load(&common.config)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    output::write_text(&out.join("config.json"), &config::echo(&cfg))?;
    cmd(&cfg, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EPIECON_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
