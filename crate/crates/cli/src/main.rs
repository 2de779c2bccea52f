//! `tsa`: command-line front end for the tree-structure solver.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, CommandArgs, CommonArgs, FloatList, RuleList, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "tsa",
    version,
    about = "Tree-structure dynamic programming for finite-horizon control"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build and sweep one tree; print the root value and tree size.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        dt: Option<f64>,
        /// Write every node (level, index, state, children) as CSV.
        #[arg(long, value_name = "PATH")]
        dump_tree: Option<PathBuf>,
    },
    /// Error table over a halving list of time steps.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        /// Halving time steps [default: 0.2,0.1,0.05].
        #[arg(long, value_name = "DT,DT/2,..")]
        dts: Option<FloatList>,
    },
    /// One error table per merge-tolerance rule over a shared list of time steps.
    PruneStudy {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "DT,DT/2,..")]
        dts: Option<FloatList>,
        /// Comma-separated pruning rules [default: dt,dt^3/2,dt^7/4,dt^2].
        #[arg(long, value_name = "RULE,..")]
        rules: Option<RuleList>,
    },
    /// Greedy optimal trajectory as CSV (n, t, state, control, value).
    Trajectory {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Compare the tree value with exhaustive enumeration of control sequences.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        dt: Option<f64>,
    },
}

impl Cmd {
    fn into_parts(self) -> (Command, CommonArgs, CommandArgs) {
        let mut extra = CommandArgs::default();
        let (command, common) = match self {
            Cmd::Solve {
                common,
                dt,
                dump_tree,
            } => {
                extra.dt = dt;
                extra.dump_tree = dump_tree;
                (Command::Solve, common)
            }
            Cmd::Convergence { common, dts } => {
                extra.dts = dts;
                (Command::Convergence, common)
            }
            Cmd::PruneStudy { common, dts, rules } => {
                extra.dts = dts;
                extra.rules = rules;
                (Command::PruneStudy, common)
            }
            Cmd::Trajectory { common, dt } => {
                extra.dt = dt;
                (Command::Trajectory, common)
            }
            Cmd::Verify { common, dt } => {
                extra.dt = dt;
                (Command::Verify, common)
            }
        };
        (command, common, extra)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (command, common, extra) = cli.command.into_parts();
    let config = RunConfig::resolve(command, common, extra)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| run::run(&config))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tsa: {e}");
            e.exit_code()
        }
    }
}
