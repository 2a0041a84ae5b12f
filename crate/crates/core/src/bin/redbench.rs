use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use redbench::pipeline::{BackendKind, Overrides, Pipeline, StageName};

#[derive(Parser)]
#[command(name = "redbench", version, about = "Build and evaluate a redundancy-aware multi-hop retrieval benchmark")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, default_value = "redbench.toml", global = true)]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Rerun completed stages and accept a changed config.
    #[arg(long, global = true)]
    force: bool,
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Read source documents and split them into chunks.
    Ingest,
    /// Extract, validate and select atomic units per chunk.
    Atoms,
    /// Find cross-chunk equivalents of every pool atom.
    Redundancy,
    /// Generate multi-hop benchmark items.
    Generate,
    /// Per-domain similarity and redundancy.
    Stats,
    /// Run the configured retrievers over every item.
    Retrieve,
    /// Score retrieval runs against gold groups.
    Evaluate,
    /// Answer with and without retrieval and decompose accuracy.
    E2e,
    /// Prompting x aggregation ablation of the ranking step.
    Ablate,
    /// Merge per-stage cost ledgers.
    Cost,
    /// Every stage in order.
    All,
}

fn stage(c: Command) -> Option<StageName> {
    Some(match c {
        Command::Ingest => StageName::Ingest,
        Command::Atoms => StageName::Atoms,
        Command::Redundancy => StageName::Redundancy,
        Command::Generate => StageName::Generate,
        Command::Stats => StageName::Stats,
        Command::Retrieve => StageName::Retrieve,
        Command::Evaluate => StageName::Evaluate,
        Command::E2e => StageName::E2e,
        Command::Ablate => StageName::Ablate,
        Command::Cost => StageName::Cost,
        Command::All => return None,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();

    let overrides = Overrides { seed: cli.seed, backend: cli.backend, run_dir: cli.run_dir };
    let result = Pipeline::from_file(&cli.config, overrides, cli.force).and_then(|p| match stage(cli.command) {
        Some(s) => p.run(s).map(|o| vec![o]),
        None => p.run_all(),
    });
    match result {
        Ok(outcomes) => {
            for o in outcomes {
                let state = if o.skipped { "up to date" } else { "done" };
                println!("{:<11} {state} ({} artifacts)", o.stage.as_str(), o.artifacts.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
