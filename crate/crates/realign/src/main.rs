use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use realign::commands::{self, Common};
use realign_core::Mode;

/// Re-align a preference-trained model to a new policy.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark, its policies and vocabulary.
    BenchGen(CommonArgs),
    /// Split a dataset into invert / punish / retain sets.
    Triage(CommonArgs),
    /// Build the gold batch and compute impact weights.
    Weigh(CommonArgs),
    /// Train from the reference model.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
    /// Score a checkpoint on a test split, optionally against another report.
    Eval(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            seed: a.seed,
            out: a.out,
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: realign_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BenchGen(a) => commands::bench_gen(&a.into()),
        Command::Triage(a) => commands::triage(&a.into()),
        Command::Weigh(a) => commands::weigh(&a.into()),
        Command::Train { common, mode } => commands::train(&common.into(), mode),
        Command::Eval(a) => commands::eval(&a.into()).map(|lines| {
            for line in lines {
                println!("{line}");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
