//! `adreg run <config>` and `adreg verify <config>`.
//!
//! Exit status: 0 on success, 2 when a certificate check fails (reports are
//! still written), 1 on configuration or runtime errors.

mod config;
mod output;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, ExperimentConfig};
use runner::Failure;

#[derive(Parser, Debug)]
#[command(name = "adreg", version, about = "Adaptive control regret experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of rollouts; overrides `n_rollouts` (truncates an explicit seed list).
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Upper limit on worker threads, whatever `--jobs` asks for.
    #[arg(long, global = true, env = "ADREG_MAX_JOBS")]
    max_jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment and write regret, trajectory and summary files.
    Run { config: PathBuf },
    /// Run the certificate checks and budgets only and write verify.json.
    Verify { config: PathBuf },
}

const DEFAULT_OUT: &str = "out";

fn fail(e: &Failure) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn load(path: &PathBuf, seeds: Option<usize>) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        key: path.display().to_string(),
        message: format!("cannot read config: {e}"),
    })?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(n) = seeds {
        let bad = |message: String| ConfigError {
            key: "--seeds".into(),
            message,
        };
        if n == 0 {
            return Err(bad("must be at least 1".into()));
        }
        if let Some(list) = &mut cfg.seeds {
            if n > list.len() {
                return Err(bad(format!("config lists only {} seeds", list.len())));
            }
            list.truncate(n);
        }
        cfg.n_rollouts = n;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn worker_count(jobs: Option<usize>, cap: Option<usize>) -> Result<usize, ConfigError> {
    let bad = |key: &str| ConfigError {
        key: key.into(),
        message: "must be at least 1".into(),
    };
    if jobs == Some(0) {
        return Err(bad("--jobs"));
    }
    if cap == Some(0) {
        return Err(bad("ADREG_MAX_JOBS"));
    }
    let wanted = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok(cap.map_or(wanted, |c| wanted.min(c)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let workers = match worker_count(cli.jobs, cli.max_jobs) {
        Ok(n) => n,
        Err(e) => return fail(&Failure::Config(e)),
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        return fail(&Failure::Runtime(format!("cannot start worker pool: {e}")));
    }
    let (path, verify_only) = match &cli.command {
        Command::Run { config } => (config, false),
        Command::Verify { config } => (config, true),
    };
    let cfg = match load(path, cli.seeds) {
        Ok(c) => c,
        Err(e) => return fail(&Failure::Config(e)),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let result = if verify_only {
        runner::verify(&cfg, &out)
    } else {
        runner::run(&cfg, &out)
    };
    match result {
        Ok(o) if o.checks_pass => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("certificate check failed; see {}", out.display());
            ExitCode::from(2)
        }
        Err(e) => fail(&e),
    }
}
