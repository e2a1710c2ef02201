//! `evacflow`: staged pipeline from device pings to evacuation OD flows and a
//! fitted direct-demand model.

mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::RunConfig;
use error::CliError;
use stages::Stage;

#[derive(Debug, Parser)]
#[command(name = "evacflow", version, about = "Evacuation OD inference and direct-demand modeling")]
struct Cli {
    /// Stage to run; `all` runs ingest through cv.
    #[arg(value_enum)]
    stage: Stage,
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the configured seed (cross-validation and synthetic data).
    #[arg(long)]
    seed: Option<u64>,
    /// Validate the config and prerequisites without writing anything.
    #[arg(long)]
    dry_run: bool,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    if cli.dry_run {
        stages::check_prerequisites(cli.stage, &cfg)?;
        println!("config ok: stage {} would write to {}", cli.stage.name(), cfg.output_dir.display());
        return Ok(());
    }
    stages::run(cli.stage, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
