use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdpb::cli::{self, CliOptions};

#[derive(Parser)]
#[command(name = "fdpb", version, about = "Federated distillation poisoning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Args),
    /// Run every grid point of the config's [sweep] section.
    Sweep(Args),
}

#[derive(clap::Args)]
struct Args {
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write every uploaded logit vector to knowledge.csv.
    #[arg(long)]
    dump_knowledge: bool,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (args, sweep) = match parsed.command {
        Command::Run(a) => (a, false),
        Command::Sweep(a) => (a, true),
    };
    let opts = CliOptions {
        seed: args.seed,
        dump_knowledge: args.dump_knowledge,
        quiet: args.quiet,
        ..CliOptions::default()
    };
    let result = if sweep {
        cli::sweep(&args.config, &args.out, &opts)
    } else {
        cli::run(&args.config, &args.out, &opts)
    };
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(cli::exit_code(&result) as u8)
}
