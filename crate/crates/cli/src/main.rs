//! One binary, subcommand style: preprocess demonstrations, train models,
//! evaluate them against baselines, run stability sweeps, roll out
//! trajectories and export field grids for external plotting.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure.

mod commands;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use rsds_core::Error;

#[derive(Parser)]
#[command(name = "rsds", version, about = "Stable dynamical systems on Riemannian manifolds")]
struct Cli {
    /// Worker threads for sweeps and training batches (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load or synthesize raw trajectories, filter, project, align goals.
    Preprocess(commands::PreprocessArgs),
    /// Train a model on a demo container; writes a checkpoint and a loss CSV.
    Train(commands::TrainArgs),
    /// Metrics report: velocity MSE, DTWD, stability sweep.
    Eval(commands::EvalArgs),
    /// Sample the learned field on a grid and export it as CSV.
    ExportField(commands::ExportFieldArgs),
    /// Integrate one trajectory, optionally with a mid-rollout perturbation.
    Rollout(commands::RolloutArgs),
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::ChartOverflow { .. }
        | Error::NonFiniteLoss { .. }
        | Error::CutLocus
        | Error::DegeneratePullback
        | Error::Singular { .. }
        | Error::InjectivityRadius { .. }
        | Error::DegenerateProjection => 3,
        _ => 2,
    }
}

fn main() {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    let result = match cli.command {
        Command::Preprocess(args) => commands::preprocess(args),
        Command::Train(args) => commands::train(args, &matches),
        Command::Eval(args) => commands::eval(args),
        Command::ExportField(args) => commands::export_field(args),
        Command::Rollout(args) => commands::rollout(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code_for(&e));
    }
}
