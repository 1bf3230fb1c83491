//! Command-line pipeline: synthetic data, scale decomposition, training,
//! ensemble generation, evaluation and calibration.
//!
//! [`run`] parses arguments and executes one command, returning the process
//! exit code. It does not touch global state, so it can be called repeatedly
//! from tests.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use scaleflow::kv::KvBlock;
use scaleflow::Error;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_MASK: i32 = 5;
pub const EXIT_DATA: i32 = 6;
pub const EXIT_NUMERIC: i32 = 7;
pub const EXIT_SPREAD: i32 = 8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                Error::Io { .. } => EXIT_IO,
                Error::Format { .. } => EXIT_FORMAT,
                Error::MaskUnsupported(_) => EXIT_MASK,
                Error::Degenerate(_) | Error::InsufficientData(_) | Error::EmptyRegion(_) => EXIT_DATA,
                Error::Divergence { .. } | Error::BlowUp { .. } | Error::GradientCheck(_) => EXIT_NUMERIC,
                Error::SpreadUndefined => EXIT_SPREAD,
                Error::Grid(_)
                | Error::Extent(_)
                | Error::Ordering(_)
                | Error::UseBilinear
                | Error::Shape(_)
                | Error::Alignment(_)
                | Error::Period(_)
                | Error::Spec(_)
                | Error::UnknownScenario(_) => EXIT_USAGE,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "scaleflow", version, about = "Scale-separated downscaling pipeline")]
struct Cli {
    /// Run configuration (`key=value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; all component seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cutoff or blur width, e.g. `fourier:500`, `blur:50`, `fourier:auto`.
    #[arg(long, global = true)]
    separator: Option<String>,
    /// Any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scenario to `<out>/synth`.
    Synth {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Split inputs into shared and residual scales.
    Decompose,
    /// Fit normalisation and train the flow model.
    Train,
    /// Sample an ensemble for the evaluation source.
    Generate,
    /// Score the methods against the reference and the driving model.
    Evaluate,
    /// Tune the noise scale on held-out target data.
    Calibrate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Decompose => "decompose",
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Evaluate => "evaluate",
            Command::Calibrate => "calibrate",
        }
    }
}

fn overrides(cli: &Cli) -> Result<KvBlock, CliError> {
    let mut kv = KvBlock::new();
    for item in &cli.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(s) = cli.seed {
        kv.set("seed", s);
    }
    if let Some(t) = cli.threads {
        kv.set("threads", t);
    }
    if let Some(s) = &cli.separator {
        kv.set("separator", s);
    }
    if let Command::Synth { scenario: Some(s) } = &cli.command {
        kv.set("scenario", s);
    }
    Ok(kv)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides(cli)?)?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cfg.threads)))?;
    log::info!("{} (seed {}, {} threads)", cli.command.name(), cfg.seed, cfg.threads);
    pool.install(|| match cli.command {
        Command::Synth { .. } => commands::synth(&cfg),
        Command::Decompose => commands::decompose(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Generate => commands::generate(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Calibrate => commands::calibrate(&cfg),
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
