use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pagnn_cli::commands::{self, CliError};
use pagnn_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "pagnn",
    version,
    about = "Robust attention GNN trained by meta-optimization over attacked clean graphs"
)]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Training seed override (defaults to the config's first seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Parallel workers for sweeps (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic parent graph and its clean subgraphs.
    Generate,
    /// Poison the target at every budget and each clean graph once.
    Attack,
    /// Train one method at one budget; writes a checkpoint and training log.
    Train {
        /// pagnn, np, second_time, ft, jt, vanilla, preprocess_baseline
        #[arg(long)]
        method: String,
        /// Budget as a fraction of clean edges (default: first grid entry).
        #[arg(long)]
        budget: Option<f64>,
        /// Override the distance-loss weight (rejected for np).
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate a checkpoint on a graph file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
    },
    /// Run the configured methods × budgets × λ × η × seeds grid.
    Sweep,
    /// Export attention-coefficient histograms and means.
    #[command(name = "export-attention")]
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let quiet = cli.quiet;

    match cli.command {
        Command::Generate => commands::cmd_generate(&cfg, quiet),
        Command::Attack => commands::cmd_attack(&cfg, quiet),
        Command::Train {
            method,
            budget,
            lambda,
        } => commands::cmd_train(&cfg, &method, budget, lambda, seed, quiet),
        Command::Evaluate { checkpoint, graph } => commands::cmd_evaluate(&cfg, &checkpoint, &graph),
        Command::Sweep => commands::cmd_sweep(&cfg, cfg.workers, quiet),
        Command::ExportAttention {
            checkpoint,
            graph,
            bins,
        } => commands::cmd_export_attention(&cfg, &checkpoint, &graph, bins),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes; everything else is usage
            if e.use_stderr() {
                eprint!("{}", e);
                return ExitCode::from(1);
            }
            print!("{}", e);
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(2)
        }
    }
}
