//! Orchestration behind the `sibprefix` binary.
//!
//! Every subcommand loads and validates all of its inputs, computes its
//! outputs in memory, and only then writes them, so a bad input never
//! leaves a half-written output directory behind.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::path::Path;

use clap::Parser;

pub use args::{Cli, Command};
pub use config::PipelineConfig;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad flags, bad config values, missing input files.
    Config(String),
    /// An input file could not be parsed.
    Parse(String),
    /// A result violated an internal invariant.
    Invariant(String),
    /// Writing outputs failed.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Invariant(m) => write!(f, "internal invariant violated: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Files produced by one subcommand, written only after it succeeds.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
    /// One-line human summary printed on success.
    pub summary: String,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        let io = |e: std::io::Error, p: &Path| CliError::Io(format!("{}: {e}", p.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| io(e, &path))?;
        }
        Ok(())
    }
}

/// Parses `args`, runs the subcommand and writes its outputs.
pub fn execute(cli: Cli) -> Result<Outputs, CliError> {
    let cfg = PipelineConfig::resolve(&cli)?;
    if let Some(n) = cfg.workers {
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outputs = match &cli.command {
        Command::Detect(_) => commands::detect(&cfg)?,
        Command::Tune(_) => commands::tune(&cfg)?,
        Command::Enrich(_) => commands::enrich(&cfg)?,
        Command::Diff(_) => commands::diff(&cfg)?,
        Command::Stats(_) => commands::stats(&cfg)?,
    };
    outputs.write_to(&cfg.out)?;
    Ok(outputs)
}

/// Entry point: returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            if !out.summary.is_empty() {
                println!("{}", out.summary);
            }
            0
        }
        Err(e) => {
            eprintln!("sibprefix: {e}");
            e.exit_code()
        }
    }
}
