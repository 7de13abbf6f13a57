use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fintact_cli::commands;
use fintact_cli::config::{parse_overrides, ExperimentConfig};
use fintact_cli::CliError;

/// Synthetic tactile sensing experiments: data generation, training and evaluation.
#[derive(Parser)]
#[command(name = "fintact", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset into the output directory.
    Simulate(Common),
    /// Train one model on a dataset.
    Train(Common),
    /// Score a checkpoint on a dataset split.
    Eval(Common),
    /// Train and score several architectures and tabulate them together.
    Ablation(Common),
    /// Compare autodiff gradients with central differences.
    GradCheck(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file; `--key value` pairs override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only log to run.log.
    #[arg(long, short)]
    quiet: bool,
    /// Overrides such as `--epochs 5` or `--train.learning_rate 0.01`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::Simulate(c) | Command::Train(c) | Command::Eval(c) | Command::Ablation(c) | Command::GradCheck(c)) =
        &cli.command;
    // the trailing overrides swallow any flags written after them
    let (mut config, mut quiet) = (c.config.clone(), c.quiet);
    let mut rest = Vec::new();
    let mut args = c.overrides.iter();
    while let Some(a) = args.next() {
        match a.as_str() {
            "-q" | "--quiet" => quiet = true,
            "--config" => config = args.next().map(PathBuf::from),
            _ => match a.strip_prefix("--config=") {
                Some(path) => config = Some(PathBuf::from(path)),
                None => rest.push(a.clone()),
            },
        }
    }
    let cfg = ExperimentConfig::load(config.as_deref(), &parse_overrides(&rest)?)?;
    match cli.command {
        Command::Simulate(_) => commands::simulate(&cfg, quiet).map(drop),
        Command::Train(_) => commands::train_cmd(&cfg, quiet).map(drop),
        Command::Eval(_) => commands::eval_cmd(&cfg, quiet).map(|(_, table)| print!("{table}")),
        Command::Ablation(_) => commands::ablation_cmd(&cfg, quiet).map(|table| print!("{table}")),
        Command::GradCheck(_) => commands::grad_check_cmd(&cfg, quiet).map(|table| print!("{table}")),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
