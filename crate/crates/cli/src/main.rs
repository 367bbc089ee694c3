mod cmd;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Settings;

const AFTER_HELP: &str = "\
Settings are layered: command-line flags win over environment variables
(EMOEVENT_SEED, EMOEVENT_CONFIG), which win over the config file, which wins
over built-in defaults. The provider API key is only ever read from the
environment variable named by `api_key_env` in the config (default
EMOEVENT_API_KEY).

Exit status: 0 on success, 1 on an operational error, 2 on a usage error.";

#[derive(Parser, Debug)]
#[command(
    name = "emoevent",
    version,
    about = "Harvest, filter, label, store and evaluate common Chinese emotional events",
    after_help = AFTER_HELP
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// Seed for sampling, splitting, training and the offline provider.
    #[arg(long, global = true, env = "EMOEVENT_SEED")]
    pub seed: Option<u64>,

    /// TOML config file.
    #[arg(long, global = true, env = "EMOEVENT_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Do everything except writing files and calling the network.
    #[arg(long, global = true)]
    pub dry_run: bool,

    /// Stamp provenance with this RFC 3339 time instead of the clock.
    #[arg(long, global = true, value_name = "TIMESTAMP")]
    pub frozen_time: Option<String>,

    /// Use the deterministic offline provider instead of the configured one.
    #[arg(long, global = true)]
    pub mock: bool,

    /// Answer book for the offline provider's yes/no and polarity queries.
    #[arg(long, global = true, value_name = "TSV")]
    pub mock_answers: Option<PathBuf>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Indicator registries: statistics, template expansion, 被 composition, pruning.
    #[command(subcommand)]
    Indicators(cmd::indicators::IndicatorsCmd),
    /// Generate events from indicators through a provider.
    #[command(subcommand)]
    Harvest(cmd::harvest::HarvestCmd),
    /// Validity filter: annotation sampling, training, curves, application.
    #[command(subcommand)]
    Filter(cmd::filter::FilterCmd),
    /// Polarity labels for accepted events.
    #[command(subcommand)]
    Polarity(cmd::polarity::PolarityCmd),
    /// The event knowledge base.
    #[command(subcommand)]
    Kb(cmd::kb::KbCmd),
    /// Evaluation arithmetic.
    #[command(subcommand)]
    Eval(cmd::eval::EvalCmd),
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("EMOEVENT_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Indicators(c) => cmd::indicators::run(c, &settings),
        Command::Harvest(c) => cmd::harvest::run(c, &settings),
        Command::Filter(c) => cmd::filter::run(c, &settings),
        Command::Polarity(c) => cmd::polarity::run(c, &settings),
        Command::Kb(c) => cmd::kb::run(c, &settings),
        Command::Eval(c) => cmd::eval::run(c, &settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
