use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use d3m::error::exit;
use d3m::{cmd_generate, cmd_report, cmd_run, CliError, Mode, RunConfig, RunOptions, ThreadPool};

#[derive(Parser)]
#[command(name = "d3m", version, about = "Debias training data by removing examples that hurt the worst groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Override one config key, e.g. `--set train.epochs=40`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/val/test files.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run a pipeline and write its artifacts and report.
    Run {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Worker threads for attribution trials and retraining; defaults to
        /// the number of cores.
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a run directory and rewrite its report.json.
    Report { run_dir: PathBuf },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::parse("", &overrides)?,
    };
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set `out` in the config".into()))?;
    Ok((cfg, out))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common } => {
            let (cfg, out) = load(&common)?;
            for path in cmd_generate(&cfg, &out, common.force)? {
                println!("{}", path.display());
            }
        }
        Command::Run { mode, workers, common } => {
            let (cfg, out) = load(&common)?;
            let workers = workers.unwrap_or_else(|| ThreadPool::available().workers());
            cmd_run(&cfg, mode, &RunOptions {
                out: out.clone(),
                workers,
                force: common.force,
            })?;
            print!("{}", cmd_report(&out)?.0);
        }
        Command::Report { run_dir } => print!("{}", cmd_report(&run_dir)?.0),
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
