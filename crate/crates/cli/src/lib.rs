//! Command-line front end of the dissemination pipeline.
//!
//! Every subcommand reads a flat `key = value` scenario file (optional),
//! applies `key=value` overrides from the command line and writes its
//! artifacts plus a `manifest-<command>.json` into the output directory.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dissem_core::Error;
use serde_json::json;

use crate::config::{default_out, RawConfig, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dissem",
    version,
    about = "Metapopulation D2D dissemination pipeline"
)]
pub struct Cli {
    /// Scenario file with one `key = value` per line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: $DISSEM_OUT or ./dissem-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic census and CDR corpus.
    Synth(Overrides),
    /// Extract mobility parameters from a CDR file.
    Ingest(Overrides),
    /// Compute the mobility steady state and contact parameters.
    #[command(name = "steady-state")]
    SteadyState(Overrides),
    /// Simulate dissemination.
    Run(Overrides),
    /// Mobility graph statistics and jump-length fit.
    Analyze(Overrides),
    /// List the accepted configuration keys.
    Keys,
}

#[derive(Debug, clap::Args)]
pub struct Overrides {
    /// `key=value` settings applied after the scenario file.
    pub set: Vec<String>,
}

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() || matches!(e, Error::EmptyNormalization { .. }) {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

pub fn error_json(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::Parse { .. } => "parse",
        Error::Validation { .. } => "validation",
        Error::Dimension(_) => "dimension",
        Error::NoReturnPath { .. } => "no_return_path",
        Error::EmptyNormalization { .. } => "empty_normalization",
        Error::NonFinite { .. } => "non_finite",
        Error::TauUnderflow { .. } => "tau_underflow",
        Error::TooFewSamples { .. } => "too_few_samples",
        Error::Io(_) => "io",
    };
    let mut v = json!({ "error": kind, "message": e.to_string(), "exit_code": exit_code(e) });
    match e {
        Error::Parse { line, .. } => v["line"] = json!(line),
        Error::Validation { field, .. } => v["field"] = json!(field),
        _ => {}
    }
    v
}

fn configure(cli: &Cli, overrides: &Overrides) -> Result<ScenarioConfig, Error> {
    let mut raw = match &cli.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    for a in &overrides.set {
        raw.apply(a)?;
    }
    if let Some(seed) = cli.seed {
        raw.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        raw.set("out", &out.display().to_string())?;
    }
    let cfg = raw.resolve(&default_out())?;
    cfg.validate()?;
    Ok(cfg)
}

type CommandFn = fn(&ScenarioConfig) -> Result<Vec<PathBuf>, Error>;

/// Runs one parsed invocation and returns the files it wrote.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>, Error> {
    let (run, overrides): (CommandFn, _) = match &cli.command {
        Command::Synth(o) => (commands::synth, o),
        Command::Ingest(o) => (commands::ingest, o),
        Command::SteadyState(o) => (commands::steady, o),
        Command::Run(o) => (commands::run, o),
        Command::Analyze(o) => (commands::analyze, o),
        Command::Keys => {
            for (k, doc) in config::KEYS {
                println!("{k:<24} {doc}");
            }
            return Ok(Vec::new());
        }
    };
    let cfg = configure(cli, overrides)?;
    log::info!("writing to {}", cfg.out.display());
    run(&cfg)
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors go to stderr as one JSON object.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}
