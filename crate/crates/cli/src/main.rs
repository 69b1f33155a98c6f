use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leadfollow_cli::{run_config_file, RunOptions};

#[derive(Parser)]
#[command(name = "leadfollow", version, about = "Leader-follower control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a config and run it.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and LEADFOLLOW_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        threads: Option<u64>,
        /// Stop after validation.
        #[arg(long)]
        validate_only: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        seed,
        threads,
        validate_only,
    } = Cli::parse().command;
    let opts = RunOptions {
        out,
        seed,
        threads: threads.map(|k| k as usize),
        validate_only,
    };
    let outcome = run_config_file(&config, &opts);
    if let Some(f) = &outcome.failure {
        eprintln!("error [{}]: {}", f.code, f.message);
        for d in &f.diagnostics {
            eprintln!("  {d}");
        }
    } else if validate_only {
        println!("{}: ok", config.display());
    } else {
        for a in &outcome.artifacts {
            println!("{}", a.display());
        }
        println!("{}", outcome.out_dir.join(leadfollow_cli::run::MANIFEST_FILE).display());
    }
    ExitCode::from(outcome.exit_code as u8)
}
