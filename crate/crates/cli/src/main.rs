use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zeresfdg_cli::commands::{cmd_run, cmd_sweep, cmd_verify_golden, parse_values};
use zeresfdg_cli::CliError;

/// Adaptive frequency-decoupled guidance on a toy sampler.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of a numeric parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Parameter name, e.g. `s`, `lambda_high` or `run.schedule.rho`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run golden cases and byte-compare their artifacts.
    VerifyGolden {
        /// Case directory, or a directory of case directories.
        golden_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers == Some(0) {
        eprintln!("error: --workers must be >= 1");
        return ExitCode::from(2);
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.to_exit()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out } => {
            let summary = cmd_run(&config, out.as_deref(), cli.workers)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let values = parse_values(&values)?;
            let rows = cmd_sweep(&config, &axis, &values, out.as_deref(), cli.workers)?;
            for r in rows {
                println!(
                    "{}\t{}={}\tswitches={}\tl2_cond={:.6}",
                    r.dir, axis, r.value, r.summary.mode_switches, r.summary.l2_to_cond
                );
            }
        }
        Command::VerifyGolden { golden_dir } => {
            let n = cmd_verify_golden(&golden_dir, cli.workers)?;
            println!("{n} golden case(s) match");
        }
    }
    Ok(())
}
