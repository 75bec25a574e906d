use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wargame_cli::{cmd_similarity, cmd_train, cmd_wargame, CliError, Options};

#[derive(Parser)]
#[command(name = "wargame", version, about = "Attacker-vs-defender wargames over small classifier pools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Abort episodes on out-of-budget queries instead of projecting them.
    #[arg(long, global = true)]
    strict_budget: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train models lacking a load path and write an accuracy table.
    Train,
    /// Run one experiment per configured pool.
    Wargame,
    /// Gradient-similarity analysis for the configured model pairs.
    Similarity,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let config = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let opts = Options {
        config,
        out: cli.out,
        strict_budget: cli.strict_budget,
    };
    match cli.command {
        Command::Train => cmd_train(&opts),
        Command::Wargame => cmd_wargame(&opts),
        Command::Similarity => cmd_similarity(&opts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
