use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snica_cli::commands;
use snica_cli::config::RunConfig;
use snica_cli::CliError;

#[derive(Parser)]
#[command(name = "snica", version, about = "Structured nonlinear ICA with switching linear dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write x, s, u, f_s tensor files
    Simulate(Common),
    /// Fit a model and write a checkpoint with its ELBO trace
    Train(Common),
    /// MCC and denoising score of a checkpoint on a dataset
    Eval(Common),
    /// Identifiability checks for a checkpoint or a simulated model
    Diagnose(Common),
    /// MCC as a function of sequence length
    Datasize(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

type Handler = fn(&RunConfig, Option<u64>, &std::path::Path) -> snica_cli::Result<String>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (args, run): (Common, Handler) = match cli.command {
        Command::Simulate(a) => (a, commands::cmd_simulate),
        Command::Train(a) => (a, commands::cmd_train),
        Command::Eval(a) => (a, commands::cmd_eval),
        Command::Diagnose(a) => (a, commands::cmd_diagnose),
        Command::Datasize(a) => (a, commands::cmd_datasize),
    };
    let result = RunConfig::load(&args.config).and_then(|cfg| run(&cfg, args.seed, &args.out));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
