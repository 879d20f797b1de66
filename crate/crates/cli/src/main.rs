use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "fround",
    version,
    about = "VANET rogue-node detection simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Override the scenario's master seed.
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// Also write every delivery attempt to events.csv.
        #[arg(long)]
        emit_events: bool,
    },
    /// Run the cross product of a sweep file.
    Sweep {
        #[arg(long, value_name = "PATH")]
        sweep: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// Worker threads; defaults to the number of host processors.
        #[arg(long, value_name = "N")]
        parallel: Option<NonZeroUsize>,
    },
    /// Check a scenario file and print it normalized.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FROUND_LOG", "warn")).init();
    let code = match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            emit_events,
        } => fround_cli::cmd_run(&config, seed, &out, emit_events),
        Command::Sweep {
            sweep,
            out,
            parallel,
        } => fround_cli::cmd_sweep(&sweep, &out, parallel.map(NonZeroUsize::get)),
        Command::Validate { config } => fround_cli::cmd_validate(&config),
    };
    ExitCode::from(code as u8)
}
