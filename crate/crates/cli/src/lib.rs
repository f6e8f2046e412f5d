//! Command-line front end: configuration, cohort files, run artifacts and
//! the `train`, `eval` and `ablate` commands.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod dataset;
pub mod report;

pub use commands::{cmd_ablate, cmd_eval, cmd_train, RunManifest, Split};
pub use config::RunConfig;

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or incompatible inputs (exit 2).
    Config(String),
    /// Training produced a non-finite value (exit 3).
    Diverged(String),
    /// Anything else (exit 1).
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Diverged(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mmfuse::Error> for CliError {
    fn from(e: mmfuse::Error) -> Self {
        match e {
            mmfuse::Error::Config(m) => CliError::Config(m),
            e @ mmfuse::Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(format!("I/O error: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "mmfuse", version, about = "Multimodal fusion training on synthetic lesion cohorts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a cohort, train one model and write the run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Score a stored cohort with a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Path to a cohort's dataset.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Train every cell of an ablation grid on one shared cohort.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
}

/// Sizes the global thread pool from `MMFUSE_THREADS` when it is set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("MMFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("MMFUSE_THREADS must be a positive integer, got '{raw}'")))?;
    // A pool that already exists (a second call in one process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Train { config, seed, out } => {
            let m = cmd_train(&config, seed, &out)?;
            let auroc = m.final_.last.metrics.auroc.map_or("n/a".into(), |a| format!("{a:.4}"));
            println!("trained {} epochs; test AUROC {auroc}; artifacts in {}", m.epochs.len(), out.display());
        }
        Command::Eval { ckpt, data, split, out } => {
            let r = cmd_eval(&ckpt, &data, split, &out)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serialises"));
        }
        Command::Ablate { grid, out } => {
            let rows = cmd_ablate(&grid, &out)?;
            println!("{} cells; table in {}", rows.len(), out.join("ablation.csv").display());
        }
    }
    Ok(())
}

/// Parses `args` and runs, returning the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mmfuse: {e}");
            e.exit_code()
        }
    }
}
