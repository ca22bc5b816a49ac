use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use opl::cli::{execute, Command, Invocation, EXIT_CONFIG};

/// Run a named experiment suite, or check a config without running.
#[derive(Parser)]
#[command(name = "opl", version)]
struct Args {
    /// init-check, stability, ntk, train-gd, train-sgd, landscape, arch-cnn, arch-resnet, all, or validate
    command: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = if args.command == "validate" {
        Command::Validate
    } else {
        match args.command.parse() {
            Ok(s) => Command::Run(s),
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        }
    };
    let code = execute(&Invocation {
        command,
        config: args.config,
        seed: args.seed,
        out: args.out,
        threads: args.threads,
    });
    ExitCode::from(code as u8)
}
