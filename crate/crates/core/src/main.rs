use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use isvi::harness::{cmd_bench, cmd_fit, cmd_weight_decay, exit_code, load_config, Outcome};
use isvi::Result;

#[derive(Parser)]
#[command(name = "isvi", version, about = "Variational inference with importance-sampled gradient reuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one optimizer and write its trace and summary.
    Fit(Common),
    /// Track importance weights over consecutive reuse steps for several factor sizes.
    WeightDecay(Common),
    /// Compare optimizer variants by evaluations to an ELBO threshold.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(command: Command) -> Result<Outcome> {
    let (cmd, args): (fn(&_, u64, Option<PathBuf>) -> Result<Outcome>, Common) = match command {
        Command::Fit(a) => (cmd_fit, a),
        Command::WeightDecay(a) => (cmd_weight_decay, a),
        Command::Bench(a) => (cmd_bench, a),
    };
    let (cfg, seed) = load_config(&args.config, args.seed)?;
    cmd(&cfg, seed, args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli.command);
    match &result {
        Err(e) => eprintln!("error: {e}"),
        Ok(Outcome::ThresholdNotReached) => eprintln!("threshold not reached by every run"),
        Ok(Outcome::Success) => {}
    }
    ExitCode::from(exit_code(&result) as u8)
}
