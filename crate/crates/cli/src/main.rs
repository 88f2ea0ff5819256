mod args;
mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use tracing_subscriber::EnvFilter;

use args::Cli;
use config::FileConfig;

/// Why a subcommand stopped. Usage problems exit 1, everything else 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

macro_rules! runtime_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Runtime(e.into())
            }
        }
    )*};
}

runtime_errors!(
    anyhow::Error,
    std::io::Error,
    serde_json::Error,
    recap_core::error::DataError,
    recap_core::error::GatewayError,
    recap_core::error::RewriteError,
    recap_core::error::BankError,
    recap_core::error::ProbeError,
    recap_core::error::MetricsError
);

fn init_logging(level: &str) -> Result<(), Failure> {
    if !matches!(level, "error" | "warn" | "info" | "debug" | "trace") {
        return Err(Failure::Usage(format!(
            "--log-level must be error, warn, info or debug, got `{level}`"
        )));
    }
    let filter = EnvFilter::try_from_env("RECAP_LOG").unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    Ok(())
}

async fn run(cli: Cli) -> Result<serde_json::Value, Failure> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let level = cli
        .log_level
        .clone()
        .or_else(|| file.string("log_level"))
        .unwrap_or_else(|| "warn".into());
    init_logging(&level)?;
    let ctx = commands::Context { file, seed: cli.seed };
    commands::dispatch(&ctx, cli.command).await
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli).await {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("Run `recap --help` for usage.");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
