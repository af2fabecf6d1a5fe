use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use mtfl_core::runner::{parse_config, report_from_dir, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "mtfl",
    version,
    about = "Layered multi-task federated learning simulator"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured scenario once with the `[federation]` hyperparameters.
    Run(RunArgs),
    /// Grid-search every configured scenario and keep the best point.
    Grid(RunArgs),
    /// Rebuild the comparison report from an output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(args: &RunArgs) -> mtfl_core::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    Ok((cfg, out))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            error!("cannot set up {jobs} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Run(args) | Command::Grid(args) => load(args).and_then(|(cfg, out)| {
            let grid = matches!(cli.command, Command::Grid(_));
            run_experiment(&cfg, &out, grid).map(|_| {
                println!("{}", out.join("report.txt").display());
            })
        }),
        Command::Report { out } => report_from_dir(out).map(|_| {
            println!("{}", out.join("report.txt").display());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
